#include "pcnn/model.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace pcnn {

// ---------------------------------------------------------------------------
// Configuration

void ModelConfig::validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
        throw std::invalid_argument("invalid config field '" + field + "': " + why);
    };
    if (frame_len < 2 || frame_len % 2 != 0) fail("frame_len", "must be even and >= 2");
    if (overlap >= frame_len) fail("overlap", "must be smaller than frame_len");
    if (channels == 0) fail("channels", "must be >= 1");
    if (num_pcb == 0) fail("num_pcb", "must be >= 1");
    if (reduction == 0) fail("reduction", "must be >= 1");
    if (!(alpha >= 0.0 && alpha <= 1.0)) fail("alpha", "must lie in [0, 1]");
    if (!(norm_eps > 0.0)) fail("norm_eps", "must be positive");
    try {
        stft().validate();
    } catch (const std::invalid_argument& e) {
        fail("stft_frame/stft_hop", e.what());
    }
}

blocks::BlockConfig ModelConfig::block_config() const {
    blocks::BlockConfig b;
    b.channels = channels;
    b.attention_dim = attention_dim ? attention_dim : std::max<std::size_t>(4, channels / 4);
    b.gru_hidden = gru_hidden ? gru_hidden : channels;
    b.reduction = reduction;
    b.norm_eps = norm_eps;
    return b;
}

ModelConfig toy_config() {
    ModelConfig c;
    c.frame_len = 64;
    c.overlap = 32;
    c.channels = 8;
    c.num_pcb = 1;
    c.attention_dim = 4;
    c.gru_hidden = 8;
    c.stft_frame = 64;
    c.stft_hop = 32;
    return c;
}

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(const std::string& key, const std::string& value, std::size_t line) {
    T out{};
    const char* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || ptr != end)
        throw std::invalid_argument("config line " + std::to_string(line) + ": bad value '" + value + "' for " + key);
    return out;
}

// Field table shared by the parser, the printer and the checkpoint writer.
struct Field {
    const char* name;
    std::size_t ModelConfig::*size_field;
    double ModelConfig::*real_field;
    std::uint64_t ModelConfig::*u64_field;
};

const std::vector<Field>& fields() {
    static const std::vector<Field> table{
        {"frame_len", &ModelConfig::frame_len, nullptr, nullptr},
        {"overlap", &ModelConfig::overlap, nullptr, nullptr},
        {"channels", &ModelConfig::channels, nullptr, nullptr},
        {"num_pcb", &ModelConfig::num_pcb, nullptr, nullptr},
        {"attention_dim", &ModelConfig::attention_dim, nullptr, nullptr},
        {"gru_hidden", &ModelConfig::gru_hidden, nullptr, nullptr},
        {"reduction", &ModelConfig::reduction, nullptr, nullptr},
        {"stft_frame", &ModelConfig::stft_frame, nullptr, nullptr},
        {"stft_hop", &ModelConfig::stft_hop, nullptr, nullptr},
        {"alpha", nullptr, &ModelConfig::alpha, nullptr},
        {"norm_eps", nullptr, &ModelConfig::norm_eps, nullptr},
        {"seed", nullptr, nullptr, &ModelConfig::seed},
    };
    return table;
}

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

} // namespace

ModelConfig parse_config(std::string_view text) {
    ModelConfig cfg;
    std::istringstream in{std::string(text)};
    std::string raw;
    std::size_t line = 0;
    while (std::getline(in, raw)) {
        ++line;
        const auto hash = raw.find('#');
        const std::string stripped = trim(std::string_view(raw).substr(0, hash));
        if (stripped.empty()) continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(line) + ": expected 'key = value'");
        const std::string key = trim(std::string_view(stripped).substr(0, eq));
        const std::string value = trim(std::string_view(stripped).substr(eq + 1));
        const auto& table = fields();
        auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return key == f.name; });
        if (it == table.end())
            throw std::invalid_argument("config line " + std::to_string(line) + ": unknown key '" + key + "'");
        if (it->size_field) cfg.*(it->size_field) = parse_number<std::size_t>(key, value, line);
        if (it->real_field) cfg.*(it->real_field) = parse_number<double>(key, value, line);
        if (it->u64_field) cfg.*(it->u64_field) = parse_number<std::uint64_t>(key, value, line);
    }
    cfg.validate();
    return cfg;
}

ModelConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string config_to_text(const ModelConfig& config) {
    std::string out;
    for (const Field& f : fields()) {
        out += f.name;
        out += " = ";
        if (f.size_field) out += std::to_string(config.*(f.size_field));
        if (f.real_field) out += format_double(config.*(f.real_field));
        if (f.u64_field) out += std::to_string(config.*(f.u64_field));
        out += '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// Build and forward

PcnnParams build(const ModelConfig& config) {
    config.validate();
    PcnnParams out;
    out.config = config;
    ParamInit init(out.tensors, config.seed);
    const blocks::BlockConfig bc = config.block_config();
    blocks::init_encoder(init, "encoder", bc);
    for (std::size_t i = 0; i < config.num_pcb; ++i) blocks::init_pcb(init, "pcb" + std::to_string(i), bc);
    blocks::init_masking(init, "masking", bc);
    blocks::init_decoder(init, "decoder", bc);
    return out;
}

Var forward(const Scope& params, const ModelConfig& config, const Var& x) {
    if (x.shape().size() != 1 || x.dim(0) == 0) throw std::invalid_argument("forward: waveform must be 1-D and non-empty");
    const blocks::BlockConfig bc = config.block_config();
    const FrameSpec spec = config.frame_spec();
    const Var frames = segment(x, spec);
    const Var encoded = blocks::encoder_forward(frames, params.sub("encoder"), bc);
    Var sep = encoded;
    for (std::size_t i = 0; i < config.num_pcb; ++i)
        sep = blocks::pcb_forward(sep, params.sub("pcb" + std::to_string(i)), bc);
    const Var masked = blocks::masking_forward(sep, encoded, params.sub("masking"));
    const Var decoded = blocks::decoder_forward(masked, params.sub("decoder"), bc);
    return overlap_add(decoded, spec, x.dim(0));
}

Waveform forward(const PcnnParams& params, std::span<const double> x) {
    if (x.empty()) throw std::invalid_argument("forward: empty waveform");
    const Bindings bound(params.tensors, nullptr);
    const Var in(Tensor({x.size()}, std::vector<double>(x.begin(), x.end())));
    return forward(Scope(bound, ""), params.config, in).value().values();
}

// ---------------------------------------------------------------------------
// Losses

namespace {
void require_equal_length(const char* what, std::size_t a, std::size_t b) {
    if (a != b)
        throw std::invalid_argument(std::string(what) + ": clean has " + std::to_string(a) + " samples, estimate has " +
                                    std::to_string(b));
}
Var waveform_var(std::span<const double> x) {
    if (x.empty()) throw std::invalid_argument("empty waveform");
    return Var(Tensor({x.size()}, std::vector<double>(x.begin(), x.end())));
}
} // namespace

Var loss_frequency(const Var& clean, const Var& est, const spectral::StftConfig& stft) {
    require_equal_length("loss_frequency", clean.value().numel(), est.value().numel());
    return ops::mse(spectral::stft_magnitude(clean, stft), spectral::stft_magnitude(est, stft));
}

Var loss_time(const Var& clean, const Var& est) {
    require_equal_length("loss_time", clean.value().numel(), est.value().numel());
    return ops::mse(clean, est);
}

Var loss_total(const Var& clean, const Var& est, const spectral::StftConfig& stft, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw std::invalid_argument("loss_total: alpha " + format_double(alpha) + " outside [0, 1]");
    return ops::add(ops::scale(loss_frequency(clean, est, stft), alpha),
                    ops::scale(loss_time(clean, est), 1.0 - alpha));
}

double loss_frequency(std::span<const double> clean, std::span<const double> est, const spectral::StftConfig& stft) {
    require_equal_length("loss_frequency", clean.size(), est.size());
    return loss_frequency(waveform_var(clean), waveform_var(est), stft).value().item();
}

double loss_time(std::span<const double> clean, std::span<const double> est) {
    require_equal_length("loss_time", clean.size(), est.size());
    return loss_time(waveform_var(clean), waveform_var(est)).value().item();
}

double loss_total(std::span<const double> clean, std::span<const double> est, const spectral::StftConfig& stft,
                  double alpha) {
    require_equal_length("loss_total", clean.size(), est.size());
    return loss_total(waveform_var(clean), waveform_var(est), stft, alpha).value().item();
}

double evaluate_loss(const PcnnParams& params, std::span<const double> clean, std::span<const double> noisy) {
    require_equal_length("evaluate_loss", clean.size(), noisy.size());
    const Bindings bound(params.tensors, nullptr);
    const Var est = forward(Scope(bound, ""), params.config, waveform_var(noisy));
    return loss_total(waveform_var(clean), est, params.config.stft(), params.config.alpha).value().item();
}

Gradients loss_gradients(const PcnnParams& params, std::span<const double> clean, std::span<const double> noisy,
                         double* loss_out) {
    require_equal_length("loss_gradients", clean.size(), noisy.size());
    Tape tape;
    const Bindings bound(params.tensors, &tape);
    const Var est = forward(Scope(bound, ""), params.config, waveform_var(noisy));
    const Var loss = loss_total(waveform_var(clean), est, params.config.stft(), params.config.alpha);
    if (loss_out) *loss_out = loss.value().item();
    return tape.backward(loss);
}

// ---------------------------------------------------------------------------
// Training

std::vector<double> train_toy(PcnnParams& params, std::span<const double> clean, std::span<const double> noisy,
                              std::size_t steps, const AdamOptions& adam,
                              const std::function<void(std::size_t, double)>& on_step) {
    std::vector<double> losses;
    losses.reserve(steps);
    std::vector<Tensor> m, v;
    for (const auto& [name, t] : params.tensors.entries()) {
        m.emplace_back(t.shape(), 0.0);
        v.emplace_back(t.shape(), 0.0);
    }
    double b1_pow = 1.0, b2_pow = 1.0;
    for (std::size_t step = 0; step < steps; ++step) {
        double loss = 0.0;
        const Gradients grads = loss_gradients(params, clean, noisy, &loss);
        if (!std::isfinite(loss))
            throw NumericalError("training diverged: non-finite loss at step " + std::to_string(step), step);
        losses.push_back(loss);
        if (on_step) on_step(step, loss);
        b1_pow *= adam.beta1;
        b2_pow *= adam.beta2;
        auto& entries = params.tensors.entries();
        for (std::size_t k = 0; k < entries.size(); ++k) {
            Tensor& p = entries[k].second;
            const Tensor& g = grads.at(entries[k].first);
            for (std::size_t i = 0; i < p.numel(); ++i) {
                m[k][i] = adam.beta1 * m[k][i] + (1.0 - adam.beta1) * g[i];
                v[k][i] = adam.beta2 * v[k][i] + (1.0 - adam.beta2) * g[i] * g[i];
                const double mhat = m[k][i] / (1.0 - b1_pow);
                const double vhat = v[k][i] / (1.0 - b2_pow);
                p[i] -= adam.lr * mhat / (std::sqrt(vhat) + adam.eps);
            }
        }
    }
    return losses;
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// Layout (all integers and floats little-endian):
//   "PCNN" | u32 version | u32 field count | fields | u32 tensor count | tensors
//   field  : u32 key length | key | u8 kind (0 = u64, 1 = f64) | 8 value bytes
//   tensor : u32 name length | name | u32 rank | u64 extents[rank] | f64 data[numel]

namespace {

class Writer {
  public:
    void raw(std::string_view s) { out_ += s; }
    void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) { le(v, 4); }
    void u64(std::uint64_t v) { le(v, 8); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s);
    }
    std::string take() { return std::move(out_); }

  private:
    void le(std::uint64_t v, int bytes) {
        for (int i = 0; i < bytes; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    std::string out_;
};

class Reader {
  public:
    explicit Reader(std::string_view in) : in_(in) {}
    std::string_view raw(std::size_t n) {
        if (pos_ + n > in_.size()) throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
        auto s = in_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::uint8_t u8() { return static_cast<std::uint8_t>(raw(1)[0]); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
    std::uint64_t u64() { return le(8); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str() { return std::string(raw(u32())); }
    bool done() const { return pos_ == in_.size(); }

  private:
    std::uint64_t le(int bytes) {
        const auto s = raw(static_cast<std::size_t>(bytes));
        std::uint64_t v = 0;
        for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[i])) << (8 * i);
        return v;
    }
    std::string_view in_;
    std::size_t pos_ = 0;
};

} // namespace

std::string serialize(const PcnnParams& params) {
    Writer w;
    w.raw("PCNN");
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(fields().size()));
    for (const Field& f : fields()) {
        w.str(f.name);
        if (f.real_field) {
            w.u8(1);
            w.f64(params.config.*(f.real_field));
        } else {
            w.u8(0);
            w.u64(f.size_field ? params.config.*(f.size_field) : params.config.*(f.u64_field));
        }
    }
    w.u32(static_cast<std::uint32_t>(params.tensors.size()));
    for (const auto& [name, t] : params.tensors.entries()) {
        w.str(name);
        w.u32(static_cast<std::uint32_t>(t.rank()));
        for (std::size_t e : t.shape()) w.u64(e);
        for (double v : t.data()) w.f64(v);
    }
    return w.take();
}

PcnnParams deserialize(std::string_view bytes) {
    Reader r(bytes);
    if (r.raw(4) != "PCNN") throw CheckpointError("not a PCNN checkpoint (bad magic)");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                              std::to_string(kCheckpointVersion) + ")");
    ModelConfig cfg;
    const std::uint32_t nfields = r.u32();
    for (std::uint32_t i = 0; i < nfields; ++i) {
        const std::string key = r.str();
        const std::uint8_t kind = r.u8();
        const std::uint64_t bits = r.u64();
        const auto& table = fields();
        auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return key == f.name; });
        if (it == table.end()) throw CheckpointError("unknown config field in checkpoint: " + key);
        if ((kind == 1) != (it->real_field != nullptr)) throw CheckpointError("wrong value kind for field " + key);
        if (it->real_field) cfg.*(it->real_field) = std::bit_cast<double>(bits);
        if (it->size_field) cfg.*(it->size_field) = static_cast<std::size_t>(bits);
        if (it->u64_field) cfg.*(it->u64_field) = bits;
    }
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw CheckpointError(std::string("checkpoint config invalid: ") + e.what());
    }

    // The stored tensors must match the layout this config builds.
    PcnnParams out = build(cfg);
    const std::uint32_t count = r.u32();
    if (count != out.tensors.size())
        throw CheckpointError("checkpoint holds " + std::to_string(count) + " tensors, config expects " +
                              std::to_string(out.tensors.size()));
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = r.str();
        auto& [expected_name, t] = out.tensors.entries()[i];
        if (name != expected_name)
            throw CheckpointError("tensor " + std::to_string(i) + " is '" + name + "', expected '" + expected_name + "'");
        const std::uint32_t rank = r.u32();
        Shape shape(rank);
        for (auto& e : shape) e = static_cast<std::size_t>(r.u64());
        if (shape != t.shape())
            throw CheckpointError("shape mismatch for " + name + ": " + shape_str(shape) + " vs " + shape_str(t.shape()));
        for (double& v : t.data()) v = r.f64();
    }
    if (!r.done()) throw CheckpointError("trailing bytes after checkpoint payload");
    return out;
}

void save(const PcnnParams& params, const std::filesystem::path& path) {
    const std::string bytes = serialize(params);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

PcnnParams load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return deserialize(ss.str());
}

} // namespace pcnn
