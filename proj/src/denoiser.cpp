#include "dctts/denoiser.hpp"

#include <cmath>

namespace dctts {

DenoiserConfig DenoiserConfig::from(const Config& cfg) {
    DenoiserConfig d;
    d.layers = static_cast<int>(cfg.get_int("denoiser.layers", d.layers));
    d.heads = static_cast<int>(cfg.get_int("denoiser.heads", d.heads));
    d.width = static_cast<int>(cfg.get_int("denoiser.width", d.width));
    d.vocab_k = static_cast<int>(cfg.get_int("vq.K", d.vocab_k));
    d.max_positions = static_cast<int>(cfg.get_int("denoiser.max_positions", d.max_positions));
    d.freq = static_cast<int>(cfg.get_int("denoiser.freq", d.freq));
    d.ffn_inner = static_cast<int>(cfg.get_int("denoiser.ffn_inner", 0));
    if (d.layers < 1) throw ConfigError("denoiser.layers must be >= 1");
    if (d.width % d.heads != 0) throw ConfigError("denoiser.heads must divide denoiser.width");
    return d;
}

Denoiser::Denoiser(const DenoiserConfig& cfg, uint64_t seed) : cfg_(cfg) {
    if (cfg_.ffn_inner == 0) cfg_.ffn_inner = 4 * cfg_.width;
    SeqRng rng(seed, /*stream=*/0xDE);
    auto add = [&](LayerSpec spec, const std::string& name) {
        layers_.push_back(std::make_unique<Layer>(spec, params_, "den/" + name, rng));
        return layers_.size() - 1;
    };
    roles_.tok_emb = add({.kind = LayerKind::Embedding, .in = cfg_.vocab_k + 1, .out = cfg_.width}, "tok_emb");
    pos_emb_ = &params_.create("den/pos_emb", {cfg_.max_positions, cfg_.width}, Init::Normal002, rng);
    roles_.temb1 = add({.kind = LayerKind::Linear, .in = cfg_.width, .out = cfg_.width}, "temb1");
    roles_.temb2 = add({.kind = LayerKind::Linear, .in = cfg_.width, .out = cfg_.width}, "temb2");
    for (int b = 0; b < cfg_.layers; ++b) {
        const std::string p = "blk" + std::to_string(b) + ".";
        BlockRoles r;
        r.ada = add({.kind = LayerKind::AdaptiveLayerNorm, .in = cfg_.width, .aux_dim = cfg_.width}, p + "ada");
        r.attn = add({.kind = LayerKind::MultiHeadSelfAttention, .in = cfg_.width, .heads = cfg_.heads},
                     p + "attn");
        r.fuse = add({.kind = LayerKind::Linear, .in = 2 * cfg_.width, .out = cfg_.width}, p + "fuse");
        r.ffn = add({.kind = LayerKind::Ffn, .in = cfg_.width, .inner = cfg_.ffn_inner}, p + "ffn");
        roles_.blocks.push_back(r);
    }
    roles_.final_ln = add({.kind = LayerKind::LayerNorm, .in = cfg_.width}, "final_ln");
    roles_.head = add({.kind = LayerKind::Linear, .in = cfg_.width, .out = cfg_.vocab_k}, "head");
}

Graph::Id Denoiser::timestep_embedding(Graph& g, int t) const {
    // sinusoidal row -> two-layer projection shared by every block
    Tensor sin_row({1, cfg_.width});
    const int half = cfg_.width / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::pow(10000.0, -2.0 * i / cfg_.width);
        sin_row.at(0, i) = std::sin(t * freq);
        sin_row.at(0, half + i) = std::cos(t * freq);
    }
    Graph::Id h = layers_[roles_.temb1]->forward(g, g.input(std::move(sin_row)));
    return layers_[roles_.temb2]->forward(g, g.gelu(h));
}

Graph::Id Denoiser::logits(Graph& g, const std::vector<int>& x_t, int t, Graph::Id condition) const {
    const int n = static_cast<int>(x_t.size());
    if (n == 0) throw InputError("denoiser: empty token sequence");
    if (n % cfg_.freq != 0)
        throw InputError("denoiser: sequence length " + std::to_string(n) +
                         " not divisible by the frequency factor " + std::to_string(cfg_.freq));
    const int l = n / cfg_.freq;
    if (n > cfg_.max_positions)
        throw InputError("denoiser: sequence longer than the position table (" + std::to_string(n) + " > " +
                         std::to_string(cfg_.max_positions) + ")");
    const Tensor& cond = g.val(condition);
    if (cond.rank() != 2 || cond.dim(1) != cfg_.width)
        throw ConfigError("denoiser: condition must be [l, width], got " + cond.shape_str());
    Graph::Id cond_cols = condition;
    if (cond.dim(0) != l) cond_cols = g.resize_rows(condition, l);

    for (int v : x_t)
        if (v < 0 || v > cfg_.vocab_k) throw InputError("denoiser: token index out of range");

    Tensor ids({n});
    for (int i = 0; i < n; ++i) ids.data[static_cast<size_t>(i)] = static_cast<double>(x_t[static_cast<size_t>(i)]);
    Graph::Id h = layers_[roles_.tok_emb]->forward(g, g.input(std::move(ids)));
    // learned positions: rows 0..n-1 of the table
    std::vector<int> pos_ids(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) pos_ids[static_cast<size_t>(i)] = i;
    h = g.add(h, g.embedding(pos_ids, g.param(*pos_emb_)));

    Graph::Id temb = timestep_embedding(g, t);
    // each position reads the condition column floor(p / f)
    const std::vector<int> per_col(static_cast<size_t>(l), cfg_.freq);
    Graph::Id cond_pos = g.repeat_rows(cond_cols, per_col);

    for (const BlockRoles& blk : roles_.blocks) {
        Graph::Id a = layers_[blk.ada]->forward(g, h, temb);
        h = g.add(h, layers_[blk.attn]->forward(g, a));
        Graph::Id fused = layers_[blk.fuse]->forward(g, g.concat_cols({h, cond_pos}));
        h = g.add(h, fused);
        h = g.add(h, layers_[blk.ffn]->forward(g, h));
    }
    h = layers_[roles_.final_ln]->forward(g, h);
    return layers_[roles_.head]->forward(g, h);
}

Tensor Denoiser::logits_value(const std::vector<int>& x_t, int t, const Tensor& condition) const {
    Graph g;
    Graph::Id out = logits(g, x_t, t, g.input(condition));
    Tensor result = g.val(out);
    if (!result.all_finite()) throw NumericError("denoiser: non-finite logits");
    return result;
}

double Denoiser::flops(int n_positions) const {
    double f = 0.0;
    for (const auto& layer : layers_) f += layer->flops(n_positions);
    return f;
}

}  // namespace dctts
