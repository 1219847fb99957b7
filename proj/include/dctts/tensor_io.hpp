#pragma once

#include <string>
#include <vector>

#include "dctts/tensor.hpp"

namespace dctts {

// Shared tensor file: magic "DCT1", rank u8, dims u32 LE, float32 LE payload.
namespace tensor_io {
void save(const std::string& path, const Tensor& t);
Tensor load(const std::string& path);
}  // namespace tensor_io

// Token grid file: magic "DCTK", u32 f, u32 l, u32 K, then f*l u32 LE indices
// in flattened order (position p = t*f + i: time-major, frequency-minor).
struct TokenGridFile {
    int f = 0;
    int l = 0;
    int vocab = 0;  // K; MASK = K never appears on disk
    std::vector<int> indices;
};

namespace token_io {
void save(const std::string& path, const TokenGridFile& grid);
TokenGridFile load(const std::string& path);
}  // namespace token_io

}  // namespace dctts
