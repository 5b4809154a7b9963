#include "cli.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "pcnn/analysis.hpp"
#include "wav.hpp"

namespace pcnn::cli {

using nlohmann::ordered_json;

std::string block_of(const std::string& name) {
    const auto dot = name.find('.');
    const std::string head = name.substr(0, dot);
    if (head.rfind("pcb", 0) != 0 || dot == std::string::npos) return head;
    const auto dot2 = name.find('.', dot + 1);
    const std::string part = name.substr(dot + 1, dot2 - dot - 1);
    return head + "." + (part.rfind("norm", 0) == 0 ? "norms" : part);
}

Clip tone_clip(double seconds, std::uint64_t seed) {
    if (!(seconds > 0.0)) throw std::invalid_argument("clip length must be positive, got " + std::to_string(seconds));
    const auto n = static_cast<std::size_t>(std::llround(seconds * wav::kSampleRate));
    if (n == 0) throw std::invalid_argument("clip is shorter than one sample");
    Clip c;
    c.clean.resize(n);
    std::vector<double> noise(n);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss;
    for (std::size_t i = 0; i < n; ++i) {
        c.clean[i] = 0.5 * std::sin(2.0 * std::numbers::pi * 440.0 * static_cast<double>(i) / wav::kSampleRate);
        noise[i] = gauss(rng);
    }
    c.noisy = spectral::mix_at_snr(c.clean, noise, 5.0);
    return c;
}

GradcheckResult gradcheck(const ModelConfig& config, std::size_t samples, const std::string& corrupt) {
    const PcnnParams params = build(config);
    // a clip shorter than 1/16 s still exercises every path of the toy model
    const Clip clip = tone_clip(static_cast<double>(samples) / wav::kSampleRate, config.seed);

    GradcheckResult r;
    Gradients analytic = loss_gradients(params, clip.clean, clip.noisy, &r.loss);
    bool corrupted = corrupt.empty();
    for (auto& [name, g] : analytic)
        if (block_of(name) == corrupt) {
            for (double& v : g.data()) v = v * 1.01 + 1e-3;
            corrupted = true;
        }
    if (!corrupted) throw std::invalid_argument("--corrupt: no block named '" + corrupt + "'");

    PcnnParams work = params;
    const Gradients numeric = finite_difference_gradient(
        [&](const NamedTensors& values) {
            work.tensors.assign(values);
            return evaluate_loss(work, clip.clean, clip.noisy);
        },
        params.tensors.to_map());

    const double floor = gradient_floor(r.loss);
    std::map<std::string, std::size_t> index;
    for (const auto& [name, t] : params.tensors.entries()) {
        const std::string block = block_of(name);
        if (!index.count(block)) {
            index[block] = r.rows.size();
            GradcheckRow row;
            row.block = block;
            r.rows.push_back(row);
        }
        GradcheckRow& row = r.rows[index[block]];
        const double e = relative_error(analytic.at(name), numeric.at(name), floor);
        ++row.tensors;
        row.scalars += t.numel();
        if (e >= row.max_error) row.max_error = e, row.worst = name;
    }
    r.pass = true;
    for (auto& row : r.rows) {
        row.pass = row.max_error <= r.tolerance;
        r.pass = r.pass && row.pass;
    }
    return r;
}

OverfitResult overfit(const ModelConfig& config, double seconds, std::size_t steps, double lr,
                      const std::function<void(std::size_t, double)>& on_step) {
    if (steps == 0) throw std::invalid_argument("--steps must be at least 1");
    PcnnParams params = build(config);
    const Clip clip = tone_clip(seconds, config.seed);
    AdamOptions adam;
    adam.lr = lr;
    OverfitResult r;
    r.losses = train_toy(params, clip.clean, clip.noisy, steps, adam, on_step);
    r.initial = r.losses.front();
    r.final = evaluate_loss(params, clip.clean, clip.noisy);
    if (!std::isfinite(r.final)) throw NumericalError("loss became non-finite after step " + std::to_string(steps), steps);
    r.ratio = r.final / r.initial;
    r.pass = r.final <= 0.1 * r.initial;

    // EMA (0.9) sampled every steps/10 steps must fall at every sample.
    const std::size_t stride = std::max<std::size_t>(1, steps / 10);
    double ema = r.losses.front(), last = std::numeric_limits<double>::infinity();
    r.ema_decreasing = true;
    for (std::size_t i = 0; i < r.losses.size(); ++i) {
        ema = 0.9 * ema + 0.1 * r.losses[i];
        if ((i + 1) % stride == 0) {
            if (!(ema < last)) r.ema_decreasing = false;
            last = ema;
        }
    }
    return r;
}

namespace {

// Everything one invocation records about itself.
struct Manifest {
    ordered_json j;

    Manifest() {
        j["tool"] = "pcnn";
        j["version"] = "0.1.0";
        j["command"] = nullptr;
        j["config_path"] = nullptr;
        j["seed"] = nullptr;
        j["inputs"] = ordered_json::object();
        j["outputs"] = ordered_json::object();
        j["metrics"] = ordered_json::object();
    }
    ordered_json& metrics() { return j["metrics"]; }
};

struct Options {
    std::string config_path;
    std::uint64_t seed = 0;
    CLI::Option* seed_opt = nullptr;
    std::string out;
    std::string manifest_path;
};

ModelConfig resolve_config(const Options& o, const ModelConfig& fallback, Manifest& m) {
    ModelConfig cfg = o.config_path.empty() ? fallback : load_config(o.config_path);
    if (o.seed_opt && o.seed_opt->count() > 0) cfg.seed = o.seed;
    cfg.validate();
    if (!o.config_path.empty()) m.j["config_path"] = o.config_path;
    m.j["seed"] = cfg.seed;
    m.j["config"] = config_to_text(cfg);
    return cfg;
}

void require_toy(const ModelConfig& cfg) {
    const std::size_t n = analysis::param_count(cfg);
    if (n > kToyParamLimit)
        throw std::invalid_argument("model has " + std::to_string(n) + " parameters; this command needs a toy config (<= " +
                                    std::to_string(kToyParamLimit) + ")");
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::invalid_argument("cannot write " + path);
    f << text;
    if (!f) throw std::invalid_argument("write failed: " + path);
}

std::vector<double> fit_length(const std::vector<double>& x, std::size_t n) {
    if (x.empty()) throw std::invalid_argument("noise file is empty");
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = x[i % x.size()];
    return y;
}

std::string fixed(double v, int digits) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

int cmd_enhance(const std::string& in, const std::string& checkpoint, const std::string& clean_path, Options& o,
                Manifest& m, std::ostream& out) {
    m.j["inputs"]["audio"] = in;
    m.j["inputs"]["checkpoint"] = checkpoint;
    const PcnnParams params = load(checkpoint);
    m.j["seed"] = params.config.seed;
    const wav::Audio audio = wav::read(in);
    if (audio.samples.empty()) throw std::invalid_argument(in + ": no samples");
    const Waveform y = forward(params, audio.samples);
    const std::size_t clipped = wav::write(o.out, y, audio.format);
    m.j["outputs"]["audio"] = o.out;
    m.metrics()["samples"] = y.size();
    m.metrics()["duration_s"] = static_cast<double>(y.size()) / wav::kSampleRate;
    m.metrics()["clipped_samples"] = clipped;
    out << "enhanced " << y.size() << " samples (" << fixed(static_cast<double>(y.size()) / wav::kSampleRate, 3)
        << " s) -> " << o.out << "\n";
    if (clipped) out << "warning: " << clipped << " samples exceeded [-1, 1]\n";
    if (!clean_path.empty()) {
        m.j["inputs"]["clean"] = clean_path;
        const wav::Audio clean = wav::read(clean_path);
        if (clean.samples.size() != y.size())
            throw std::invalid_argument("--clean has " + std::to_string(clean.samples.size()) + " samples, input has " +
                                        std::to_string(y.size()));
        const double enhanced = spectral::ssnr(clean.samples, y);
        const double noisy = spectral::ssnr(clean.samples, audio.samples);
        m.metrics()["ssnr_db"] = enhanced;
        m.metrics()["ssnr_input_db"] = noisy;
        out << "SSNR " << fixed(enhanced, 2) << " dB (input " << fixed(noisy, 2) << " dB)\n";
    }
    return kOk;
}

int cmd_mix(const std::string& clean_path, const std::string& noise_path, double snr, const std::string& format,
            Options& o, Manifest& m, std::ostream& out) {
    m.j["inputs"]["clean"] = clean_path;
    m.j["inputs"]["noise"] = noise_path;
    const wav::Audio clean = wav::read(clean_path);
    const wav::Audio noise = wav::read(noise_path);
    if (clean.samples.empty()) throw std::invalid_argument(clean_path + ": no samples");
    const std::vector<double> n = fit_length(noise.samples, clean.samples.size());
    const Waveform mixed = spectral::mix_at_snr(clean.samples, n, snr);
    std::vector<double> residual(mixed.size());
    for (std::size_t i = 0; i < mixed.size(); ++i) residual[i] = mixed[i] - clean.samples[i];
    const double measured = spectral::snr_db(clean.samples, residual);
    const wav::Format fmt = format.empty() ? clean.format : (format == "pcm16" ? wav::Format::pcm16 : wav::Format::float32);
    const std::size_t clipped = wav::write(o.out, mixed, fmt);
    m.j["outputs"]["audio"] = o.out;
    m.metrics()["snr_requested_db"] = snr;
    m.metrics()["snr_measured_db"] = measured;
    m.metrics()["clipped_samples"] = clipped;
    m.metrics()["format"] = wav::format_name(fmt);
    out << "mixed at " << fixed(measured, 6) << " dB SNR (requested " << snr << ") -> " << o.out << "\n";
    if (clipped) out << "warning: " << clipped << " samples exceeded [-1, 1] and were clipped\n";
    return kOk;
}

int cmd_analyze(std::size_t frames, std::size_t freq, Options& o, Manifest& m, std::ostream& out) {
    const ModelConfig cfg = resolve_config(o, ModelConfig{}, m);
    const analysis::AnalysisReport report = analysis::analyze(cfg, frames, freq);
    const std::string text = analysis::to_text(report);
    const auto deviations = analysis::table1_deviations(report.table1);

    std::string sampling, fields;
    for (const auto& col : report.table1.columns) {
        sampling += (sampling.empty() ? "" : ", ") + fixed(col.sampling.with_multiplicity * 100.0, 2) + "%";
        fields += (fields.empty() ? "" : ", ") + std::to_string(col.receptive_field) + "x" + std::to_string(col.receptive_field);
    }
    out << "table 1 receptive fields: " << fields << "\n";
    out << "table 1 sampling rates:   " << sampling << "\n";
    out << "table 1 param ratios:     ";
    for (const auto& col : report.table1.columns) out << fixed(col.param_ratio, 2) << "N ";
    out << "(full-width MBDC: " << fixed(report.table1.columns[0].param_ratio_full_width, 2) << "N)\n";
    out << "total parameters: " << report.params.total() << "\n";
    out << "attention ratio (C=" << report.attention_c << ", T=" << report.attention_t << ", F=" << report.attention_f
        << "): " << std::setprecision(12) << report.attention.asymptotic_ratio << "\n";

    if (o.out.empty()) {
        out << text;
    } else {
        write_text(o.out, text);
        m.j["outputs"]["report"] = o.out;
    }
    m.metrics()["table1_matches"] = deviations.empty();
    m.metrics()["param_count"] = report.params.total();
    m.metrics()["attention_ratio"] = report.attention.asymptotic_ratio;
    for (const auto& d : deviations) out << "deviation: " << d << "\n";
    return deviations.empty() ? kOk : kValidationFailure;
}

int cmd_gradcheck(std::size_t samples, const std::string& corrupt, Options& o, Manifest& m, std::ostream& out) {
    const ModelConfig cfg = resolve_config(o, toy_config(), m);
    require_toy(cfg);
    const GradcheckResult r = gradcheck(cfg, samples, corrupt);
    out << std::left << std::setw(16) << "block" << std::setw(9) << "tensors" << std::setw(9) << "scalars"
        << std::setw(14) << "max rel err" << "status\n";
    ordered_json rows = ordered_json::array();
    for (const auto& row : r.rows) {
        std::ostringstream err;
        err << std::scientific << std::setprecision(3) << row.max_error;
        out << std::left << std::setw(16) << row.block << std::setw(9) << row.tensors << std::setw(9) << row.scalars
            << std::setw(14) << err.str() << (row.pass ? "PASS" : "FAIL") << "\n";
        rows.push_back({{"block", row.block},
                        {"tensors", row.tensors},
                        {"scalars", row.scalars},
                        {"max_relative_error", row.max_error},
                        {"worst_parameter", row.worst},
                        {"pass", row.pass}});
    }
    out << (r.pass ? "gradcheck PASS" : "gradcheck FAIL") << " (tolerance " << r.tolerance << ", loss " << r.loss << ")\n";
    m.metrics()["loss"] = r.loss;
    m.metrics()["tolerance"] = r.tolerance;
    m.metrics()["blocks"] = rows;
    m.metrics()["pass"] = r.pass;
    if (!corrupt.empty()) m.metrics()["corrupted_block"] = corrupt;
    if (!o.out.empty()) {
        write_text(o.out, rows.dump(2) + "\n");
        m.j["outputs"]["report"] = o.out;
    }
    return r.pass ? kOk : kNumericalFailure;
}

int cmd_overfit(double seconds, std::size_t steps, double lr, Options& o, Manifest& m, std::ostream& out) {
    const ModelConfig cfg = resolve_config(o, toy_config(), m);
    require_toy(cfg);
    const std::size_t report_every = std::max<std::size_t>(1, steps / 10);
    const OverfitResult r = overfit(cfg, seconds, steps, lr, [&](std::size_t step, double loss) {
        if (step % report_every == 0) out << "step " << step << " loss " << loss << "\n" << std::flush;
    });
    if (!o.out.empty()) {
        std::ostringstream csv;
        csv << "step,loss\n" << std::setprecision(17);
        for (std::size_t i = 0; i < r.losses.size(); ++i) csv << i << "," << r.losses[i] << "\n";
        csv << r.losses.size() << "," << r.final << "\n";
        write_text(o.out, csv.str());
        m.j["outputs"]["loss_curve"] = o.out;
    }
    out << "initial loss " << r.initial << ", final loss " << r.final << " (" << fixed(100.0 * (1.0 - r.ratio), 2)
        << "% reduction)\n";
    out << (r.pass ? "overfit PASS" : "overfit FAIL: final loss above 10% of initial") << "\n";
    m.metrics()["seconds"] = seconds;
    m.metrics()["steps"] = steps;
    m.metrics()["lr"] = lr;
    m.metrics()["initial_loss"] = r.initial;
    m.metrics()["final_loss"] = r.final;
    m.metrics()["reduction"] = 1.0 - r.ratio;
    m.metrics()["ema_decreasing"] = r.ema_decreasing;
    m.metrics()["pass"] = r.pass;
    return r.pass ? kOk : kNumericalFailure;
}

int cmd_init(Options& o, Manifest& m, std::ostream& out) {
    const ModelConfig cfg = resolve_config(o, ModelConfig{}, m);
    const PcnnParams params = build(cfg);
    save(params, o.out);
    m.j["outputs"]["checkpoint"] = o.out;
    m.metrics()["param_count"] = params.tensors.scalar_count();
    out << "initialized " << params.tensors.scalar_count() << " parameters (seed " << cfg.seed << ") -> " << o.out << "\n";
    return kOk;
}

} // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"PCNN speech enhancement: enhance, mix, analyze, gradcheck, overfit, init"};
    app.require_subcommand(1);
    Options o;
    app.add_option("--manifest", o.manifest_path, "Write the run manifest here instead of stdout");

    auto add_config = [&o](CLI::App* sub) {
        sub->add_option("--config", o.config_path, "Model config file (key = value)")->check(CLI::ExistingFile);
    };
    auto add_seed = [&o](CLI::App* sub) { return sub->add_option("--seed", o.seed, "Seed (overrides the config)"); };

    std::string in, checkpoint, clean, noise, format, corrupt;
    double snr = 0.0, seconds = 0.25, lr = 1e-3;
    std::size_t frames = 100, freq = 128, samples = 96, steps = 500;

    auto* enhance = app.add_subcommand("enhance", "Enhance a mono 16 kHz WAV file");
    enhance->add_option("input", in, "Noisy WAV")->required()->check(CLI::ExistingFile);
    enhance->add_option("--checkpoint", checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
    enhance->add_option("--out", o.out, "Enhanced WAV")->required();
    enhance->add_option("--clean", clean, "Clean reference; reports SSNR")->check(CLI::ExistingFile);

    auto* mix = app.add_subcommand("mix", "Mix clean speech and noise at an exact SNR");
    mix->add_option("clean", clean, "Clean WAV")->required()->check(CLI::ExistingFile);
    mix->add_option("noise", noise, "Noise WAV (looped or truncated)")->required()->check(CLI::ExistingFile);
    mix->add_option("--snr", snr, "Target SNR in dB")->required();
    mix->add_option("--out", o.out, "Mixture WAV")->required();
    mix->add_option("--format", format, "Output encoding (default: that of the clean input)")
        ->check(CLI::IsMember({"pcm16", "float32"}));

    auto* analyze = app.add_subcommand("analyze", "Receptive fields, parameter counts, attention cost");
    add_config(analyze);
    analyze->add_option("--frames", frames, "T for the attention cost")->check(CLI::PositiveNumber);
    analyze->add_option("--freq", freq, "F for the attention cost")->check(CLI::PositiveNumber);
    analyze->add_option("--out", o.out, "Report file (default: stdout)");

    auto* grad = app.add_subcommand("gradcheck", "Per-block backward vs finite differences on a toy model");
    add_config(grad);
    CLI::Option* grad_seed = add_seed(grad);
    grad->add_option("--samples", samples, "Clip length in samples")->check(CLI::PositiveNumber);
    grad->add_option("--corrupt", corrupt, "Test hook: perturb this block's backward gradient");
    grad->add_option("--out", o.out, "JSON table");

    auto* fit = app.add_subcommand("overfit", "Train a toy model on one synthetic clip");
    add_config(fit);
    CLI::Option* fit_seed = add_seed(fit);
    fit->add_option("--seconds", seconds, "Clip length")->check(CLI::PositiveNumber);
    fit->add_option("--steps", steps, "Adam steps")->check(CLI::PositiveNumber);
    fit->add_option("--lr", lr, "Learning rate")->check(CLI::NonNegativeNumber);
    fit->add_option("--out", o.out, "Loss curve CSV");

    auto* init = app.add_subcommand("init", "Write a freshly initialized checkpoint");
    add_config(init);
    CLI::Option* init_seed = add_seed(init);
    init->add_option("--out", o.out, "Checkpoint path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kValidationFailure;
    }

    Manifest m;
    int status = kOk;
    try {
        if (*enhance) {
            m.j["command"] = "enhance";
            status = cmd_enhance(in, checkpoint, clean, o, m, out);
        } else if (*mix) {
            m.j["command"] = "mix";
            status = cmd_mix(clean, noise, snr, format, o, m, out);
        } else if (*analyze) {
            m.j["command"] = "analyze";
            status = cmd_analyze(frames, freq, o, m, out);
        } else if (*grad) {
            m.j["command"] = "gradcheck";
            o.seed_opt = grad_seed;
            status = cmd_gradcheck(samples, corrupt, o, m, out);
        } else if (*fit) {
            m.j["command"] = "overfit";
            o.seed_opt = fit_seed;
            status = cmd_overfit(seconds, steps, lr, o, m, out);
        } else if (*init) {
            m.j["command"] = "init";
            o.seed_opt = init_seed;
            status = cmd_init(o, m, out);
        }
    } catch (const NumericalError& e) {
        err << "numerical failure at step " << e.step() << ": " << e.what() << "\n";
        m.j["error"] = e.what();
        m.metrics()["failed_step"] = e.step();
        status = kNumericalFailure;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        m.j["error"] = e.what();
        status = kValidationFailure;
    }

    m.j["exit_status"] = status;
    const std::string text = m.j.dump();
    if (o.manifest_path.empty()) {
        out << text << "\n";
    } else {
        try {
            write_text(o.manifest_path, text + "\n");
        } catch (const std::exception& e) {
            err << "error: " << e.what() << "\n";
            return kValidationFailure;
        }
    }
    return status;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    std::vector<const char*> argv{"pcnn"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

} // namespace pcnn::cli
