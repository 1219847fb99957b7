#include "dctts/layers.hpp"

#include <cmath>

namespace dctts {

const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Linear: return "linear";
        case LayerKind::Embedding: return "embedding";
        case LayerKind::Conv1d: return "conv1d";
        case LayerKind::DepthwiseSeparableConv1d: return "depthwise_separable_conv1d";
        case LayerKind::LayerNorm: return "layer_norm";
        case LayerKind::AdaptiveLayerNorm: return "adaptive_layer_norm";
        case LayerKind::MultiHeadSelfAttention: return "multi_head_self_attention";
        case LayerKind::Ffn: return "ffn";
        case LayerKind::Gelu: return "gelu";
        case LayerKind::Relu: return "relu";
        case LayerKind::Softmax: return "softmax";
    }
    return "?";
}

void LayerSpec::validate() const {
    auto positive = [](int v, const char* what) {
        if (v <= 0) throw ConfigError(std::string("layer spec: ") + what + " must be positive");
    };
    switch (kind) {
        case LayerKind::Linear:
        case LayerKind::Embedding:
            positive(in, "in");
            positive(out, "out");
            break;
        case LayerKind::Conv1d:
            positive(in, "in");
            positive(out, "out");
            positive(kernel, "kernel");
            positive(stride, "stride");
            break;
        case LayerKind::DepthwiseSeparableConv1d:
            positive(in, "in");
            positive(kernel, "kernel");
            break;
        case LayerKind::LayerNorm:
            positive(in, "in");
            break;
        case LayerKind::AdaptiveLayerNorm:
            positive(in, "in");
            positive(aux_dim, "aux_dim");
            break;
        case LayerKind::MultiHeadSelfAttention:
            positive(in, "in");
            positive(heads, "heads");
            if (in % heads != 0) throw ConfigError("layer spec: head count must divide width");
            break;
        case LayerKind::Ffn:
            positive(in, "in");
            break;
        case LayerKind::Gelu:
        case LayerKind::Relu:
        case LayerKind::Softmax:
            break;
    }
}

Layer::Layer(LayerSpec spec, ParamStore& store, const std::string& name, SeqRng& rng) : spec_(spec) {
    spec_.validate();
    if (spec_.kind == LayerKind::Ffn && spec_.inner == 0) spec_.inner = 4 * spec_.in;
    auto add = [&](const char* role, std::vector<int> dims, Init init) {
        params_.push_back(&store.create(name + "." + role, std::move(dims), init, rng));
    };
    switch (spec_.kind) {
        case LayerKind::Linear:
            add("w", {spec_.out, spec_.in}, Init::FanInUniform);
            add("b", {spec_.out}, Init::Zeros);
            break;
        case LayerKind::Embedding:
            add("table", {spec_.in, spec_.out}, Init::Normal002);
            break;
        case LayerKind::Conv1d:
            add("w", {spec_.out, spec_.in, spec_.kernel}, Init::FanInUniform);
            add("b", {spec_.out}, Init::Zeros);
            break;
        case LayerKind::DepthwiseSeparableConv1d:
            add("dw", {spec_.in, spec_.kernel}, Init::FanInUniform);
            add("pw", {spec_.in, spec_.in}, Init::FanInUniform);
            add("pb", {spec_.in}, Init::Zeros);
            break;
        case LayerKind::LayerNorm:
            add("g", {spec_.in}, Init::Ones);
            add("b", {spec_.in}, Init::Zeros);
            break;
        case LayerKind::AdaptiveLayerNorm:
            // projects the timestep row to per-channel (scale, shift)
            add("w", {2 * spec_.in, spec_.aux_dim}, Init::FanInUniform);
            add("b", {2 * spec_.in}, Init::Zeros);
            break;
        case LayerKind::MultiHeadSelfAttention:
            add("wq", {spec_.in, spec_.in}, Init::FanInUniform);
            add("bq", {spec_.in}, Init::Zeros);
            add("wk", {spec_.in, spec_.in}, Init::FanInUniform);
            add("bk", {spec_.in}, Init::Zeros);
            add("wv", {spec_.in, spec_.in}, Init::FanInUniform);
            add("bv", {spec_.in}, Init::Zeros);
            add("wo", {spec_.in, spec_.in}, Init::FanInUniform);
            add("bo", {spec_.in}, Init::Zeros);
            break;
        case LayerKind::Ffn:
            add("w1", {spec_.inner, spec_.in}, Init::FanInUniform);
            add("b1", {spec_.inner}, Init::Zeros);
            if (spec_.ffn_conv) {
                add("cw", {spec_.inner, spec_.inner, spec_.kernel}, Init::FanInUniform);
                add("cb", {spec_.inner}, Init::Zeros);
            }
            add("w2", {spec_.in, spec_.inner}, Init::FanInUniform);
            add("b2", {spec_.in}, Init::Zeros);
            break;
        case LayerKind::Gelu:
        case LayerKind::Relu:
        case LayerKind::Softmax:
            break;
    }
}

Graph::Id Layer::forward(Graph& g, Graph::Id input, Graph::Id aux) const {
    switch (spec_.kind) {
        case LayerKind::Linear:
            return g.linear(input, g.param(*p(0)), g.param(*p(1)));
        case LayerKind::Embedding: {
            const Tensor& ids = g.val(input);
            std::vector<int> iv(ids.data.size());
            for (size_t i = 0; i < iv.size(); ++i) iv[i] = static_cast<int>(ids.data[i]);
            return g.embedding(iv, g.param(*p(0)));
        }
        case LayerKind::Conv1d:
            return g.conv1d(input, g.param(*p(0)), g.param(*p(1)), spec_.stride, spec_.pad);
        case LayerKind::DepthwiseSeparableConv1d: {
            Graph::Id dw = g.depthwise_conv1d(input, g.param(*p(0)), -1, spec_.stride, spec_.pad);
            return g.linear(dw, g.param(*p(1)), g.param(*p(2)));
        }
        case LayerKind::LayerNorm:
            return g.layer_norm(input, g.param(*p(0)), g.param(*p(1)), spec_.eps);
        case LayerKind::AdaptiveLayerNorm: {
            if (aux < 0) throw UsageError("adaptive_layer_norm requires an aux timestep row");
            Graph::Id ss = g.linear(aux, g.param(*p(0)), g.param(*p(1)));  // [1, 2d]
            Graph::Id scale = g.slice_cols(ss, 0, spec_.in);
            Graph::Id shift = g.slice_cols(ss, spec_.in, 2 * spec_.in);
            Graph::Id normed = g.ln_norm(input, spec_.eps);
            Graph::Id scaled = g.scale_columns(normed, g.add_scalar(scale, 1.0));
            return g.add_row_vector(scaled, shift);
        }
        case LayerKind::MultiHeadSelfAttention: {
            const int d = spec_.in;
            const int dh = d / spec_.heads;
            Graph::Id q = g.linear(input, g.param(*p(0)), g.param(*p(1)));
            Graph::Id k = g.linear(input, g.param(*p(2)), g.param(*p(3)));
            Graph::Id v = g.linear(input, g.param(*p(4)), g.param(*p(5)));
            std::vector<Graph::Id> heads;
            heads.reserve(static_cast<size_t>(spec_.heads));
            for (int h = 0; h < spec_.heads; ++h) {
                Graph::Id qh = g.slice_cols(q, h * dh, (h + 1) * dh);
                Graph::Id kh = g.slice_cols(k, h * dh, (h + 1) * dh);
                Graph::Id vh = g.slice_cols(v, h * dh, (h + 1) * dh);
                Graph::Id scores = g.scale(g.matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
                Graph::Id probs = g.softmax_rows(scores);
                heads.push_back(g.matmul(probs, vh));
            }
            Graph::Id cat = spec_.heads == 1 ? heads[0] : g.concat_cols(heads);
            return g.linear(cat, g.param(*p(6)), g.param(*p(7)));
        }
        case LayerKind::Ffn: {
            Graph::Id h = g.linear(input, g.param(*p(0)), g.param(*p(1)));
            h = g.gelu(h);
            size_t next = 2;
            if (spec_.ffn_conv) {
                h = g.conv1d(h, g.param(*p(2)), g.param(*p(3)), 1, spec_.kernel / 2);
                next = 4;
            }
            return g.linear(h, g.param(*p(next)), g.param(*p(next + 1)));
        }
        case LayerKind::Gelu:
            return g.gelu(input);
        case LayerKind::Relu:
            return g.relu(input);
        case LayerKind::Softmax:
            return g.softmax_rows(input);
    }
    throw UsageError("unhandled layer kind");
}

int64_t Layer::param_count() const {
    int64_t n = 0;
    for (const Parameter* q : params_) n += q->numel();
    return n;
}

double Layer::flops(int length) const {
    const double len = static_cast<double>(length);
    const double d = static_cast<double>(spec_.in);
    switch (spec_.kind) {
        case LayerKind::Linear:
            return 2.0 * spec_.in * spec_.out * len;
        case LayerKind::Conv1d:
            return 2.0 * spec_.in * spec_.out * spec_.kernel * len / spec_.stride;
        case LayerKind::DepthwiseSeparableConv1d:
            return 2.0 * d * spec_.kernel * len + 2.0 * d * d * len;
        case LayerKind::MultiHeadSelfAttention:
            return 2.0 * len * len * d + 4.0 * len * d * d;
        case LayerKind::Ffn: {
            double f = 4.0 * len * d * spec_.inner;
            if (spec_.ffn_conv) f += 2.0 * spec_.inner * spec_.inner * spec_.kernel * len;
            return f;
        }
        case LayerKind::AdaptiveLayerNorm:
            return 2.0 * spec_.aux_dim * 2.0 * d;  // one timestep row per sequence
        case LayerKind::Embedding:
        case LayerKind::LayerNorm:
        case LayerKind::Gelu:
        case LayerKind::Relu:
        case LayerKind::Softmax:
            return 0.0;
    }
    return 0.0;
}

}  // namespace dctts
