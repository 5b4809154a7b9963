#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

// Minimal RIFF/WAVE support: mono, 16 kHz, PCM16 or IEEE float32.
namespace pcnn::wav {

inline constexpr std::uint32_t kSampleRate = 16000;

enum class Format { pcm16, float32 };

struct Audio {
    std::vector<double> samples; // nominal range [-1, 1]
    Format format = Format::float32;
    std::uint32_t sample_rate = kSampleRate;
};

class WavError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

Audio read(const std::filesystem::path& path);

// PCM16 stores round(x * 32768) clamped to int16; returns how many samples
// had to be clamped. float32 stores the value as-is and counts |x| > 1.
std::size_t write(const std::filesystem::path& path, const std::vector<double>& samples, Format format);

const char* format_name(Format f);

} // namespace pcnn::wav
