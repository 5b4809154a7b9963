#include "wav.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

namespace pcnn::wav {

namespace {

constexpr std::uint16_t kTagPcm = 1, kTagFloat = 3, kTagExtensible = 0xFFFE;

std::uint32_t le32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}
std::uint16_t le16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | p[1] << 8); }

void put32(std::string& s, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put16(std::string& s, std::uint16_t v) {
    s.push_back(static_cast<char>(v & 0xFF));
    s.push_back(static_cast<char>(v >> 8));
}

} // namespace

const char* format_name(Format f) { return f == Format::pcm16 ? "pcm16" : "float32"; }

Audio read(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw WavError("cannot open " + path.string());
    const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::string where = path.string() + ": ";
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        throw WavError(where + "not a RIFF/WAVE file");

    bool have_fmt = false;
    std::uint16_t tag = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    const unsigned char* data = nullptr;
    std::size_t data_len = 0;
    for (std::size_t pos = 12; pos + 8 <= bytes.size();) {
        const std::uint32_t len = le32(&bytes[pos + 4]);
        const std::size_t body = pos + 8;
        if (body + len > bytes.size()) throw WavError(where + "chunk runs past end of file");
        if (std::memcmp(&bytes[pos], "fmt ", 4) == 0) {
            if (len < 16) throw WavError(where + "fmt chunk too short");
            tag = le16(&bytes[body]);
            channels = le16(&bytes[body + 2]);
            rate = le32(&bytes[body + 4]);
            bits = le16(&bytes[body + 14]);
            if (tag == kTagExtensible) {
                if (len < 26) throw WavError(where + "extensible fmt chunk too short");
                tag = le16(&bytes[body + 24]); // first two bytes of the subformat GUID
            }
            have_fmt = true;
        } else if (std::memcmp(&bytes[pos], "data", 4) == 0) {
            data = &bytes[body];
            data_len = len;
        }
        pos = body + len + (len & 1u);
    }
    if (!have_fmt) throw WavError(where + "missing fmt chunk");
    if (!data) throw WavError(where + "missing data chunk");
    if (channels != 1)
        throw WavError(where + std::to_string(channels) + " channels; only mono is supported (downmix first)");
    if (rate != kSampleRate)
        throw WavError(where + "sample rate " + std::to_string(rate) + " Hz; only 16000 Hz is supported (resample first)");

    Audio a;
    a.sample_rate = rate;
    if (tag == kTagPcm && bits == 16) {
        a.format = Format::pcm16;
        a.samples.resize(data_len / 2);
        for (std::size_t i = 0; i < a.samples.size(); ++i)
            a.samples[i] = static_cast<std::int16_t>(le16(data + 2 * i)) / 32768.0;
    } else if (tag == kTagFloat && bits == 32) {
        a.format = Format::float32;
        a.samples.resize(data_len / 4);
        for (std::size_t i = 0; i < a.samples.size(); ++i)
            a.samples[i] = std::bit_cast<float>(le32(data + 4 * i));
    } else {
        throw WavError(where + "unsupported encoding (format tag " + std::to_string(tag) + ", " + std::to_string(bits) +
                       " bits); use 16-bit PCM or 32-bit float");
    }
    return a;
}

std::size_t write(const std::filesystem::path& path, const std::vector<double>& samples, Format format) {
    const std::uint16_t bits = format == Format::pcm16 ? 16 : 32;
    const std::uint32_t data_len = static_cast<std::uint32_t>(samples.size() * (bits / 8));
    std::string out;
    out.reserve(44 + data_len);
    out += "RIFF";
    put32(out, 36 + data_len);
    out += "WAVEfmt ";
    put32(out, 16);
    put16(out, format == Format::pcm16 ? kTagPcm : kTagFloat);
    put16(out, 1);
    put32(out, kSampleRate);
    put32(out, kSampleRate * (bits / 8));
    put16(out, bits / 8);
    put16(out, bits);
    out += "data";
    put32(out, data_len);

    std::size_t clipped = 0;
    for (double x : samples) {
        if (format == Format::pcm16) {
            const double q = std::round(x * 32768.0);
            const double c = std::clamp(q, -32768.0, 32767.0);
            if (c != q) ++clipped;
            put16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(c)));
        } else {
            if (std::abs(x) > 1.0) ++clipped;
            put32(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
        }
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw WavError("cannot write " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw WavError("write failed: " + path.string());
    return clipped;
}

} // namespace pcnn::wav
