#include <cmath>
#include <cstring>
#include <fstream>

#include "dctts/audio.hpp"

namespace dctts::wav {

namespace {

void put_u32(std::ofstream& out, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<char*>(b), 4);
}
void put_u16(std::ofstream& out, uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>(v >> 8)};
    out.write(reinterpret_cast<char*>(b), 2);
}
uint32_t get_u32(std::ifstream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}
uint16_t get_u16(std::ifstream& in) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

}  // namespace

void write(const std::string& path, const Waveform& w) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write wav file: " + path);
    const uint32_t data_bytes = static_cast<uint32_t>(w.samples.size() * 2);
    out.write("RIFF", 4);
    put_u32(out, 36 + data_bytes);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    put_u32(out, 16);
    put_u16(out, 1);  // PCM
    put_u16(out, 1);  // mono
    put_u32(out, static_cast<uint32_t>(w.sample_rate));
    put_u32(out, static_cast<uint32_t>(w.sample_rate * 2));
    put_u16(out, 2);
    put_u16(out, 16);
    out.write("data", 4);
    put_u32(out, data_bytes);
    for (double s : w.samples) {
        const double clamped = std::min(1.0, std::max(-1.0, s));
        const int16_t q = static_cast<int16_t>(std::lround(clamped * 32767.0));
        unsigned char b[2] = {static_cast<unsigned char>(q & 0xff),
                              static_cast<unsigned char>((q >> 8) & 0xff)};
        out.write(reinterpret_cast<char*>(b), 2);
    }
    if (!out) throw ConfigError("short write to wav file: " + path);
}

Waveform read(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open wav file: " + path);
    char tag[4];
    in.read(tag, 4);
    if (!in || std::memcmp(tag, "RIFF", 4) != 0) throw InputError("not a RIFF file: " + path);
    get_u32(in);
    in.read(tag, 4);
    if (!in || std::memcmp(tag, "WAVE", 4) != 0) throw InputError("not a WAVE file: " + path);

    Waveform w;
    bool have_fmt = false;
    while (in.read(tag, 4)) {
        const uint32_t size = get_u32(in);
        if (std::memcmp(tag, "fmt ", 4) == 0) {
            const uint16_t format = get_u16(in);
            const uint16_t channels = get_u16(in);
            w.sample_rate = static_cast<int>(get_u32(in));
            get_u32(in);
            get_u16(in);
            const uint16_t bits = get_u16(in);
            if (format != 1 || channels != 1 || bits != 16)
                throw InputError("wav must be 16-bit mono PCM: " + path);
            if (size > 16) in.ignore(size - 16);
            have_fmt = true;
        } else if (std::memcmp(tag, "data", 4) == 0) {
            if (!have_fmt) throw InputError("wav data before fmt chunk: " + path);
            const uint32_t n = size / 2;
            w.samples.resize(n);
            for (uint32_t i = 0; i < n; ++i) {
                unsigned char b[2];
                in.read(reinterpret_cast<char*>(b), 2);
                const int16_t q = static_cast<int16_t>(b[0] | (b[1] << 8));
                w.samples[i] = static_cast<double>(q) / 32767.0;
            }
            return w;
        } else {
            in.ignore(size + (size & 1));
        }
    }
    throw InputError("wav file has no data chunk: " + path);
}

}  // namespace dctts::wav
