#include "dctts/vq.hpp"

#include <cmath>

namespace dctts {

VqConfig VqConfig::from(const Config& cfg) {
    VqConfig v;
    v.K = static_cast<int>(cfg.get_int("vq.K", v.K));
    v.d = static_cast<int>(cfg.get_int("vq.d", v.d));
    v.mel_channels = static_cast<int>(cfg.get_int("audio.mel_channels", v.mel_channels));
    v.commitment = cfg.get_double("vq.commitment", v.commitment);
    v.dead_code_steps = static_cast<int>(cfg.get_int("vq.dead_code_steps", v.dead_code_steps));
    if (v.K < 2) throw ConfigError("vq.K must be >= 2");
    if (v.d < 4 || v.d % 4 != 0) throw ConfigError("vq.d must be a positive multiple of 4");
    if (v.mel_channels % v.freq_factor() != 0)
        throw ConfigError("vq: mel channels must divide by the frequency downsample factor");
    return v;
}

SpectrogramVq::SpectrogramVq(const VqConfig& cfg, uint64_t seed) : cfg_(cfg) {
    SeqRng rng(seed, /*stream=*/0x59);
    const int c1 = cfg_.d / 4, c2 = cfg_.d / 2, c3 = cfg_.d;
    auto conv = [&](const char* name, int cin, int cout, int kf, int kt) {
        params_.create(std::string("vq/") + name + ".w", {cout, cin, kf, kt}, Init::FanInUniform, rng);
        params_.create(std::string("vq/") + name + ".b", {cout}, Init::Zeros, rng);
    };
    auto tconv = [&](const char* name, int cin, int cout, int kf, int kt) {
        params_.create(std::string("vq/") + name + ".w", {cin, cout, kf, kt}, Init::FanInUniform, rng);
        params_.create(std::string("vq/") + name + ".b", {cout}, Init::Zeros, rng);
    };
    auto norm = [&](const char* name, int ch) {
        params_.create(std::string("vq/") + name + ".g", {ch}, Init::Ones, rng);
        params_.create(std::string("vq/") + name + ".b", {ch}, Init::Zeros, rng);
    };
    conv("enc1", 1, c1, 5, 3);
    norm("enc1n", c1);
    conv("enc2", c1, c2, 2, 3);
    norm("enc2n", c2);
    conv("enc3", c2, c3, 2, 2);
    tconv("dec3", c3, c2, 2, 2);
    norm("dec3n", c2);
    tconv("dec2", c2, c1, 2, 3);
    norm("dec2n", c1);
    tconv("dec1", c1, 1, 5, 3);
    codebook_ = &params_.create("vq/codebook", {cfg_.K, cfg_.d}, Init::Normal002, rng);
    usage_ = Tensor::zeros({cfg_.K});
}

Tensor SpectrogramVq::mel_to_chw(const MelSpectrogram& mel, int* orig_frames) const {
    if (mel.channels() != cfg_.mel_channels)
        throw InputError("vq: expected " + std::to_string(cfg_.mel_channels) + " mel channels, got " +
                         std::to_string(mel.channels()));
    const int F = mel.channels();
    const int L = mel.frames();
    const int Lp = L % cfg_.time_factor() == 0 ? L : L + (cfg_.time_factor() - L % cfg_.time_factor());
    if (orig_frames) *orig_frames = L;
    Tensor x({1, F, Lp});
    for (int i = 0; i < F; ++i)
        for (int t = 0; t < Lp; ++t)
            x.data[static_cast<size_t>(i) * Lp + t] = mel.values.at(i, std::min(t, L - 1));  // edge replication
    return x;
}

Graph::Id SpectrogramVq::encoder_forward(Graph& g, Graph::Id mel_chw) const {
    auto w = [&](const char* n) { return g.param(const_cast<Parameter&>(params_.get(std::string("vq/") + n))); };
    Graph::Id h = g.conv2d(mel_chw, w("enc1.w"), w("enc1.b"), 5, 1, 0, 1);
    h = g.relu(h);
    h = g.channel_norm(h, w("enc1n.g"), w("enc1n.b"), 1e-5);
    h = g.conv2d(h, w("enc2.w"), w("enc2.b"), 2, 1, 0, 1);
    h = g.relu(h);
    h = g.channel_norm(h, w("enc2n.g"), w("enc2n.b"), 1e-5);
    h = g.conv2d(h, w("enc3.w"), w("enc3.b"), 2, 2, 0, 0);
    return h;
}

Graph::Id SpectrogramVq::decoder_forward(Graph& g, Graph::Id latent_chw) const {
    auto w = [&](const char* n) { return g.param(const_cast<Parameter&>(params_.get(std::string("vq/") + n))); };
    Graph::Id h = g.conv2d_transpose(latent_chw, w("dec3.w"), w("dec3.b"), 2, 2, 0, 0);
    h = g.relu(h);
    h = g.channel_norm(h, w("dec3n.g"), w("dec3n.b"), 1e-5);
    h = g.conv2d_transpose(h, w("dec2.w"), w("dec2.b"), 2, 1, 0, 1);
    h = g.relu(h);
    h = g.channel_norm(h, w("dec2n.g"), w("dec2n.b"), 1e-5);
    h = g.conv2d_transpose(h, w("dec1.w"), w("dec1.b"), 5, 1, 0, 1);
    return g.clamp(h, -1.0, 1.0);
}

LatentGrid SpectrogramVq::encode(const MelSpectrogram& mel) const {
    int orig = 0;
    Tensor x = mel_to_chw(mel, &orig);
    Graph g;
    Graph::Id z = encoder_forward(g, g.input(std::move(x)));
    LatentGrid out;
    out.features = g.val(z);
    out.orig_channels = mel.channels();
    out.orig_frames = orig;
    if (!out.features.all_finite()) throw NumericError("vq encode: non-finite latent");
    return out;
}

std::pair<TokenGrid, LatentGrid> SpectrogramVq::quantize(const LatentGrid& z) const {
    if (z.d() != cfg_.d) throw InputError("vq quantize: latent width mismatch");
    const int f = z.f(), l = z.l(), d = cfg_.d;
    TokenGrid tokens;
    tokens.f = f;
    tokens.l = l;
    tokens.vocab = cfg_.K;
    tokens.orig_frames = z.orig_frames;
    tokens.indices.assign(static_cast<size_t>(f) * l, 0);
    LatentGrid q = z;
    const Tensor& cb = codebook_->value;
    for (int t = 0; t < l; ++t)
        for (int i = 0; i < f; ++i) {
            double best = 0.0;
            int best_k = -1;
            for (int k = 0; k < cfg_.K; ++k) {
                double dist = 0.0;
                for (int c = 0; c < d; ++c) {
                    const double diff =
                        z.features.data[(static_cast<size_t>(c) * f + i) * l + t] - cb.at(k, c);
                    dist += diff * diff;
                }
                if (best_k < 0 || dist < best) {  // strict < keeps the lowest index on ties
                    best = dist;
                    best_k = k;
                }
            }
            tokens.indices[static_cast<size_t>(t) * f + i] = best_k;
            for (int c = 0; c < d; ++c)
                q.features.data[(static_cast<size_t>(c) * f + i) * l + t] = cb.at(best_k, c);
        }
    return {std::move(tokens), std::move(q)};
}

MelSpectrogram SpectrogramVq::decode(const TokenGrid& tokens) const {
    for (int idx : tokens.indices)
        if (idx < 0 || idx >= cfg_.K)
            throw InputError("vq decode: token index " + std::to_string(idx) + " outside [0," +
                             std::to_string(cfg_.K) + ")");
    Graph g;
    Graph::Id rows = g.embedding(tokens.indices, g.input(codebook_->value));
    Graph::Id grid = g.rows_to_grid(rows, tokens.f, tokens.l);
    Graph::Id out = decoder_forward(g, grid);
    const Tensor& y = g.val(out);
    const int F = y.dim(1);
    const int L = tokens.orig_frames > 0 ? tokens.orig_frames : y.dim(2);
    MelSpectrogram mel;
    mel.values = Tensor::zeros({F, L});
    for (int i = 0; i < F; ++i)
        for (int t = 0; t < L; ++t) mel.values.at(i, t) = y.data[static_cast<size_t>(i) * y.dim(2) + t];
    if (!mel.values.all_finite()) throw NumericError("vq decode: non-finite reconstruction");
    return mel;
}

TokenGrid SpectrogramVq::tokenize(const MelSpectrogram& mel) const {
    return quantize(encode(mel)).first;
}

Graph::Id SpectrogramVq::training_loss(Graph& g, const MelSpectrogram& mel, bool track_usage,
                                       LossParts* parts) {
    int orig = 0;
    Tensor x = mel_to_chw(mel, &orig);
    const Tensor target = x;
    Graph::Id z = encoder_forward(g, g.input(std::move(x)));
    Graph::Id z_rows = g.grid_to_rows(z);  // [N, d]

    LatentGrid latent;
    latent.features = g.val(z);
    latent.orig_channels = mel.channels();
    latent.orig_frames = orig;
    auto [tokens, quantized] = quantize(latent);

    if (track_usage) {
        for (int idx : tokens.indices) usage_.at(idx) = -1.0;  // mark used this step
        const int f = tokens.f, l = tokens.l;
        for (int t = 0; t < l; ++t)
            for (int i = 0; i < f; ++i) {
                Tensor cell({cfg_.d});
                for (int c = 0; c < cfg_.d; ++c)
                    cell.at(c) = latent.features.data[(static_cast<size_t>(c) * f + i) * l + t];
                reseed_pool_.push_back(std::move(cell));
            }
    }

    // straight-through: decoder sees the quantized rows, gradients flow to z
    const Tensor& z_val = g.val(z_rows);
    Tensor zq_rows({tokens.n(), cfg_.d});
    for (int p = 0; p < tokens.n(); ++p)
        for (int c = 0; c < cfg_.d; ++c)
            zq_rows.at(p, c) = codebook_->value.at(tokens.indices[static_cast<size_t>(p)], c);
    Tensor delta(zq_rows.dims);
    for (int64_t i = 0; i < delta.numel(); ++i) delta.data[i] = zq_rows.data[i] - z_val.data[i];
    Graph::Id st_rows = g.add_const_tensor(z_rows, delta);

    Graph::Id recon = decoder_forward(g, g.rows_to_grid(st_rows, tokens.f, tokens.l));
    Graph::Id recon_loss = g.mse(recon, g.input(target));

    // codebook term pulls the chosen entries toward sg(z)
    Graph::Id gathered = g.embedding(tokens.indices, g.param(*codebook_));
    Graph::Id codebook_loss = g.mse(gathered, g.input(z_val));

    // commitment keeps the encoder near its chosen entries
    Graph::Id commit_loss = g.mse(z_rows, g.input(zq_rows));

    Graph::Id total = g.add(recon_loss, g.add(codebook_loss, g.scale(commit_loss, cfg_.commitment)));
    if (parts) *parts = {total, recon_loss, codebook_loss, commit_loss};
    return total;
}

int SpectrogramVq::end_of_step_maintenance(uint64_t seed, int64_t step) {
    int reseeded = 0;
    for (int k = 0; k < cfg_.K; ++k) {
        if (usage_.at(k) < 0.0) {
            usage_.at(k) = 0.0;  // was used this step
            continue;
        }
        usage_.at(k) += 1.0;
        if (usage_.at(k) >= cfg_.dead_code_steps && !reseed_pool_.empty()) {
            const size_t pick = rng::below(reseed_pool_.size(), seed ^ 0xDEADC0DEULL,
                                           static_cast<uint64_t>(step), static_cast<uint64_t>(k));
            const Tensor& cell = reseed_pool_[pick];
            for (int c = 0; c < cfg_.d; ++c) codebook_->value.at(k, c) = cell.at(c);
            usage_.at(k) = 0.0;
            ++reseeded;
        }
    }
    reseed_pool_.clear();
    return reseeded;
}

double SpectrogramVq::flops(int frames) const {
    // convolution MACs * 2, per stage, at the stated strides
    const int c1 = cfg_.d / 4, c2 = cfg_.d / 2, c3 = cfg_.d;
    const double F = cfg_.mel_channels, L = frames;
    double f = 0.0;
    f += 2.0 * (F / 5) * L * c1 * 1 * 5 * 3;
    f += 2.0 * (F / 10) * L * c2 * c1 * 2 * 3;
    f += 2.0 * (F / 20) * (L / 2) * c3 * c2 * 2 * 2;
    // decoder mirrors the encoder cost
    return 2.0 * f;
}

}  // namespace dctts
