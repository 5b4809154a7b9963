#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include <json.hpp>
#include <unistd.h>

#include "cli.hpp"
#include "pcnn/analysis.hpp"
#include "pcnn/spectral.hpp"
#include "test_support.hpp"
#include "wav.hpp"

namespace fs = std::filesystem;
using namespace pcnn;

namespace {

struct Result {
    int code;
    std::string out, err;
    nlohmann::json manifest;
};

Result run(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    Result r{cli::run(args, out, err), out.str(), err.str(), {}};
    const auto last = r.out.rfind('\n', r.out.size() >= 2 ? r.out.size() - 2 : 0);
    const std::string tail = r.out.substr(last == std::string::npos ? 0 : last + 1);
    if (!tail.empty() && tail[0] == '{') r.manifest = nlohmann::json::parse(tail);
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

struct TempDir {
    fs::path path = fs::temp_directory_path() / ("pcnn_cli_" + std::to_string(::getpid()));
    TempDir() { fs::create_directories(path); }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
};

// Hand-built header for formats the writer never produces.
void write_raw_wav(const fs::path& p, std::uint16_t channels, std::uint32_t rate, std::uint16_t bits) {
    std::string s = "RIFF";
    auto put = [&s](std::uint32_t v, int n) {
        for (int i = 0; i < n; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    };
    put(36 + 8, 4);
    s += "WAVEfmt ";
    put(16, 4);
    put(1, 2);
    put(channels, 2);
    put(rate, 4);
    put(rate * channels * bits / 8, 4);
    put(channels * bits / 8, 2);
    put(bits, 2);
    s += "data";
    put(8, 4);
    s.append(8, '\0');
    std::ofstream(p, std::ios::binary) << s;
}

} // namespace

TEST_CASE("wav round trips") {
    TempDir dir;
    std::mt19937_64 rng(1);
    std::vector<double> pcm(1000);
    for (double& v : pcm) v = static_cast<double>(static_cast<std::int16_t>(rng())) / 32768.0;
    wav::write(dir / "a.wav", pcm, wav::Format::pcm16);
    const wav::Audio a = wav::read(dir / "a.wav");
    CHECK(a.format == wav::Format::pcm16);
    CHECK(a.samples == pcm);
    wav::write(dir / "b.wav", a.samples, wav::Format::pcm16);
    CHECK(slurp(dir / "a.wav") == slurp(dir / "b.wav"));

    const auto f = testing::random_signal(500, rng, 0.9);
    wav::write(dir / "f.wav", f, wav::Format::float32);
    const wav::Audio fa = wav::read(dir / "f.wav");
    CHECK(fa.format == wav::Format::float32);
    for (std::size_t i = 0; i < f.size(); ++i) CHECK(fa.samples[i] == static_cast<double>(static_cast<float>(f[i])));

    CHECK(wav::write(dir / "c.wav", {0.5, 1.5, -2.0}, wav::Format::pcm16) == 2);
}

TEST_CASE("wav rejects unsupported audio with an actionable message") {
    TempDir dir;
    write_raw_wav(dir / "stereo.wav", 2, 16000, 16);
    write_raw_wav(dir / "cd.wav", 1, 44100, 16);
    write_raw_wav(dir / "pcm8.wav", 1, 16000, 8);
    CHECK_THROWS_WITH_AS(wav::read(dir / "stereo.wav"), doctest::Contains("only mono"), wav::WavError);
    CHECK_THROWS_WITH_AS(wav::read(dir / "cd.wav"), doctest::Contains("resample"), wav::WavError);
    CHECK_THROWS_WITH_AS(wav::read(dir / "pcm8.wav"), doctest::Contains("16-bit PCM or 32-bit float"), wav::WavError);
    std::ofstream(dir / "junk.wav") << "not audio";
    CHECK_THROWS_AS(wav::read(dir / "junk.wav"), wav::WavError);

    const Result r = run({"mix", dir / "cd.wav", dir / "cd.wav", "--snr", "0", "--out", dir / "o.wav"});
    CHECK(r.code == cli::kValidationFailure);
    CHECK(r.err.find("44100") != std::string::npos);
    CHECK(r.manifest["exit_status"] == 1);
}

TEST_CASE("mix") {
    TempDir dir;
    std::mt19937_64 rng(2);
    wav::write(dir / "clean.wav", testing::random_signal(1600, rng, 0.3), wav::Format::float32);
    wav::write(dir / "noise.wav", testing::random_signal(700, rng, 0.2), wav::Format::float32);
    for (const char* snr : {"0", "-5", "10"}) {
        const Result r = run({"mix", dir / "clean.wav", dir / "noise.wav", "--snr", snr, "--out", dir / "mix.wav"});
        REQUIRE(r.code == 0);
        CHECK(std::abs(r.manifest["metrics"]["snr_measured_db"].get<double>() - std::stod(snr)) <= 1e-6);
        CHECK(wav::read(dir / "mix.wav").samples.size() == 1600);
    }
    // loud noise at low SNR pushes samples outside [-1, 1]
    wav::write(dir / "loud.wav", testing::random_signal(1600, rng, 0.99), wav::Format::float32);
    const Result r = run({"mix", dir / "loud.wav", dir / "noise.wav", "--snr", "-5", "--out", dir / "mix.wav", "--format",
                          "pcm16"});
    CHECK(r.code == 0);
    CHECK(r.manifest["metrics"]["clipped_samples"].get<std::size_t>() > 0);
    CHECK(r.out.find("clipped") != std::string::npos);

    wav::write(dir / "silence.wav", std::vector<double>(100, 0.0), wav::Format::pcm16);
    CHECK(run({"mix", dir / "clean.wav", dir / "silence.wav", "--snr", "0", "--out", dir / "m.wav"}).code == 1);
}

TEST_CASE("analyze") {
    TempDir dir;
    const Result r = run({"analyze", "--out", dir / "report.json"});
    CHECK(r.code == 0);
    CHECK(r.out.find("33.33%, 11.11%, 100.00%") != std::string::npos);
    CHECK(r.out.find("total parameters: " + std::to_string(analysis::param_count(ModelConfig{}))) != std::string::npos);
    const auto report = nlohmann::json::parse(slurp(dir / "report.json"));
    CHECK(report["attention"]["asymptotic_ratio"].get<double>() ==
          analysis::attention_cost(64, 100, 128, ModelConfig{}.block_config().attention_dim).asymptotic_ratio);
    CHECK(r.manifest["command"] == "analyze");
    CHECK(r.manifest["metrics"]["table1_matches"] == true);

    std::ofstream(dir / "bad.cfg") << "channels = 8\nchanels = 9\n";
    const Result bad = run({"analyze", "--config", dir / "bad.cfg"});
    CHECK(bad.code == cli::kValidationFailure);
    CHECK(bad.err.find("line 2") != std::string::npos);
}

TEST_CASE("init and enhance") {
    TempDir dir;
    std::ofstream(dir / "toy.cfg") << config_to_text(toy_config());
    REQUIRE(run({"init", "--config", dir / "toy.cfg", "--seed", "3", "--out", dir / "m.ckpt"}).code == 0);
    CHECK(load(dir / "m.ckpt").config.seed == 3);

    std::mt19937_64 rng(3);
    wav::write(dir / "noisy.wav", testing::random_signal(2345, rng, 0.5), wav::Format::pcm16);
    const Result a = run({"enhance", dir / "noisy.wav", "--checkpoint", dir / "m.ckpt", "--out", dir / "a.wav"});
    REQUIRE(a.code == 0);
    CHECK(wav::read(dir / "a.wav").samples.size() == 2345);
    CHECK(wav::read(dir / "a.wav").format == wav::Format::pcm16);
    CHECK(run({"enhance", dir / "noisy.wav", "--checkpoint", dir / "m.ckpt", "--out", dir / "b.wav"}).code == 0);
    CHECK(slurp(dir / "a.wav") == slurp(dir / "b.wav"));

    // float32 output used as its own reference: the clip ceiling
    wav::write(dir / "noisy_f.wav", testing::random_signal(2000, rng, 0.5), wav::Format::float32);
    REQUIRE(run({"enhance", dir / "noisy_f.wav", "--checkpoint", dir / "m.ckpt", "--out", dir / "e.wav"}).code == 0);
    const Result s = run({"enhance", dir / "noisy_f.wav", "--checkpoint", dir / "m.ckpt", "--out", dir / "e2.wav",
                          "--clean", dir / "e.wav"});
    REQUIRE(s.code == 0);
    CHECK(s.manifest["metrics"]["ssnr_db"].get<double>() == 35.0);

    std::ofstream(dir / "broken.ckpt") << "PCNX";
    CHECK(run({"enhance", dir / "noisy.wav", "--checkpoint", dir / "broken.ckpt", "--out", dir / "c.wav"}).code == 1);
}

TEST_CASE("gradcheck") {
    const Result ok = run({"gradcheck"});
    CHECK(ok.code == 0);
    const auto& blocks = ok.manifest["metrics"]["blocks"];
    std::set<std::string> names;
    for (const auto& b : blocks) names.insert(b["block"].get<std::string>());
    CHECK(names.size() == blocks.size());
    CHECK(names == std::set<std::string>{"encoder", "pcb0.norms", "pcb0.mbdc", "pcb0.ctfa", "pcb0.hfb", "pcb0.ffn",
                                         "masking", "decoder"});
    std::size_t scalars = 0;
    for (const auto& b : blocks) scalars += b["scalars"].get<std::size_t>();
    CHECK(scalars == analysis::param_count(toy_config()));

    const Result bad = run({"gradcheck", "--samples", "64", "--corrupt", "pcb0.hfb"});
    CHECK(bad.code == cli::kNumericalFailure);
    for (const auto& b : bad.manifest["metrics"]["blocks"])
        CHECK(b["pass"].get<bool>() == (b["block"] != "pcb0.hfb"));

    CHECK(run({"gradcheck", "--corrupt", "nonexistent"}).code == cli::kValidationFailure);
    CHECK(run({"gradcheck", "--config", "/nonexistent.cfg"}).code == cli::kValidationFailure);
}

TEST_CASE("overfit plumbing") {
    TempDir dir;
    const Result flat = run({"overfit", "--steps", "4", "--seconds", "0.01", "--lr", "0", "--out", dir / "flat.csv"});
    CHECK(flat.code == cli::kNumericalFailure);
    std::istringstream csv(slurp(dir / "flat.csv"));
    std::string line;
    std::getline(csv, line);
    CHECK(line == "step,loss");
    std::set<std::string> values;
    std::size_t rows = 0;
    while (std::getline(csv, line)) values.insert(line.substr(line.find(',') + 1)), ++rows;
    CHECK(rows == 5);
    CHECK(values.size() == 1);

    const std::vector<std::string> args{"overfit", "--steps", "6", "--seconds", "0.01", "--seed", "5"};
    const Result a = run(args), b = run(args);
    CHECK(a.manifest["metrics"] == b.manifest["metrics"]);
    CHECK(a.manifest["seed"] == 5);
    CHECK(a.manifest["metrics"]["final_loss"].get<double>() < a.manifest["metrics"]["initial_loss"].get<double>());

    CHECK(run({"overfit", "--config", dir / "missing.cfg"}).code == cli::kValidationFailure);
}

TEST_CASE("refuses a full-size model for toy commands") {
    TempDir dir;
    std::ofstream(dir / "full.cfg") << config_to_text(ModelConfig{});
    const Result r = run({"gradcheck", "--config", dir / "full.cfg"});
    CHECK(r.code == cli::kValidationFailure);
    CHECK(r.err.find("toy config") != std::string::npos);
}

TEST_CASE("argument errors and manifest file") {
    TempDir dir;
    CHECK(run({}).code == cli::kValidationFailure);
    CHECK(run({"enhance"}).code == cli::kValidationFailure);
    CHECK(run({"frobnicate"}).code == cli::kValidationFailure);
    CHECK(run({"--help"}).code == 0);
    const Result r = run({"--manifest", dir / "m.json", "analyze", "--out", dir / "r.json"});
    CHECK(r.code == 0);
    const auto m = nlohmann::json::parse(slurp(dir / "m.json"));
    CHECK(m["command"] == "analyze");
    CHECK(m["exit_status"] == 0);
    CHECK(m["outputs"]["report"] == dir / "r.json");
}
