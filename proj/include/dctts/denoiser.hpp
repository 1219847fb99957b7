#pragma once

#include <memory>

#include "dctts/config.hpp"
#include "dctts/diffusion.hpp"
#include "dctts/layers.hpp"

namespace dctts {

struct DenoiserConfig {
    int layers = 12;
    int heads = 8;
    int width = 128;
    int vocab_k = 128;       // K; tokens embed over K+1 including MASK
    int max_positions = 512;
    int freq = 4;            // f; position p reads condition column p/f
    int ffn_inner = 0;       // 0 -> 4*width

    static DenoiserConfig from(const Config& cfg);
};

// Conditional transformer mapping (x_t, t, condition) to per-position logits
// over the K codebook classes. Blocks: adaptive layer norm on the timestep,
// full-context attention, linear fusion with the condition column, FFN, all
// with residuals; final layer norm before the K-class head.
class Denoiser {
public:
    Denoiser(const DenoiserConfig& cfg, uint64_t seed);

    // condition: [l, width] node with l = |x_t| / freq; pass a zeros input
    // for unconditional use
    Graph::Id logits(Graph& g, const std::vector<int>& x_t, int t, Graph::Id condition) const;

    // inference convenience over a value-level condition
    Tensor logits_value(const std::vector<int>& x_t, int t, const Tensor& condition) const;

    const DenoiserConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    int64_t parameter_count() const { return params_.parameter_count(); }
    double flops(int n_positions) const;

private:
    Graph::Id timestep_embedding(Graph& g, int t) const;

    DenoiserConfig cfg_;
    ParamStore params_;
    std::vector<std::unique_ptr<Layer>> layers_;
    struct BlockRoles {
        size_t ada = 0, attn = 0, fuse = 0, ffn = 0;
    };
    struct {
        size_t tok_emb = 0;
        size_t temb1 = 0, temb2 = 0;
        std::vector<BlockRoles> blocks;
        size_t final_ln = 0, head = 0;
    } roles_;
    Parameter* pos_emb_ = nullptr;
};

}  // namespace dctts
