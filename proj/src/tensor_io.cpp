#include "dctts/tensor_io.hpp"

#include <cstring>
#include <fstream>

#include "dctts/common.hpp"

namespace dctts {

namespace {

void put_u32(std::ofstream& out, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<char*>(b), 4);
}

uint32_t get_u32(std::ifstream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

namespace tensor_io {

void save(const std::string& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write tensor file: " + path);
    out.write("DCT1", 4);
    out.put(static_cast<char>(t.rank()));
    for (int d : t.dims) put_u32(out, static_cast<uint32_t>(d));
    for (double v : t.data) {
        const float f = static_cast<float>(v);
        out.write(reinterpret_cast<const char*>(&f), 4);
    }
    if (!out) throw ConfigError("short write to tensor file: " + path);
}

Tensor load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open tensor file: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "DCT1", 4) != 0) throw ConfigError("bad tensor magic in " + path);
    const int rank = in.get();
    if (rank <= 0 || rank > 8) throw ConfigError("bad tensor rank in " + path);
    std::vector<int> dims(static_cast<size_t>(rank));
    for (int r = 0; r < rank; ++r) dims[static_cast<size_t>(r)] = static_cast<int>(get_u32(in));
    Tensor t(dims);
    for (int64_t i = 0; i < t.numel(); ++i) {
        float f;
        in.read(reinterpret_cast<char*>(&f), 4);
        t.data[static_cast<size_t>(i)] = static_cast<double>(f);
    }
    if (!in) throw ConfigError("truncated tensor file: " + path);
    return t;
}

}  // namespace tensor_io

namespace token_io {

void save(const std::string& path, const TokenGridFile& grid) {
    if (static_cast<int>(grid.indices.size()) != grid.f * grid.l)
        throw UsageError("token grid: index count does not match f*l");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write token file: " + path);
    out.write("DCTK", 4);
    put_u32(out, static_cast<uint32_t>(grid.f));
    put_u32(out, static_cast<uint32_t>(grid.l));
    put_u32(out, static_cast<uint32_t>(grid.vocab));
    for (int idx : grid.indices) {
        if (idx < 0 || idx >= grid.vocab) throw InputError("token grid: index out of range");
        put_u32(out, static_cast<uint32_t>(idx));
    }
    if (!out) throw ConfigError("short write to token file: " + path);
}

TokenGridFile load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open token file: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "DCTK", 4) != 0) throw ConfigError("bad token magic in " + path);
    TokenGridFile grid;
    grid.f = static_cast<int>(get_u32(in));
    grid.l = static_cast<int>(get_u32(in));
    grid.vocab = static_cast<int>(get_u32(in));
    if (grid.f <= 0 || grid.l <= 0 || grid.vocab <= 0) throw ConfigError("bad token header in " + path);
    grid.indices.resize(static_cast<size_t>(grid.f) * grid.l);
    for (int& idx : grid.indices) {
        idx = static_cast<int>(get_u32(in));
        if (idx < 0 || idx >= grid.vocab) throw ConfigError("token index out of range in " + path);
    }
    if (!in) throw ConfigError("truncated token file: " + path);
    return grid;
}

}  // namespace token_io

}  // namespace dctts
