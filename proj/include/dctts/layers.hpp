#pragma once

#include <string>
#include <vector>

#include "dctts/graph.hpp"
#include "dctts/params.hpp"

namespace dctts {

enum class LayerKind {
    Linear,
    Embedding,
    Conv1d,
    DepthwiseSeparableConv1d,
    LayerNorm,
    AdaptiveLayerNorm,
    MultiHeadSelfAttention,
    Ffn,
    Gelu,
    Relu,
    Softmax,
};

const char* layer_kind_name(LayerKind k);

struct LayerSpec {
    LayerKind kind;
    int in = 0;        // input width (vocab size for embedding)
    int out = 0;       // output width
    int kernel = 3;
    int stride = 1;
    int pad = 1;
    int heads = 1;     // attention heads
    int inner = 0;     // ffn hidden width (default 4*in)
    int aux_dim = 0;   // timestep-embedding width for adaptive layer norm
    bool ffn_conv = false;  // extra conv1d between the two ffn linears
    double eps = 1e-5;

    void validate() const;
};

// A configured layer with its parameters. The building block every network in
// the repo is assembled from.
class Layer {
public:
    Layer(LayerSpec spec, ParamStore& store, const std::string& name, SeqRng& rng);

    // `aux` is required for AdaptiveLayerNorm (a [1,aux_dim] timestep row)
    // and ignored elsewhere.
    Graph::Id forward(Graph& g, Graph::Id input, Graph::Id aux = -1) const;

    int64_t param_count() const;
    // FLOPs to process `length` positions, multiply-accumulate convention
    // (1 MAC = 2 FLOPs); activations and normalizations excluded.
    double flops(int length) const;

    const LayerSpec& spec() const { return spec_; }

private:
    Parameter* p(size_t i) const { return params_[i]; }

    LayerSpec spec_;
    std::vector<Parameter*> params_;
};

}  // namespace dctts
