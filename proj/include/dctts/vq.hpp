#pragma once

#include <optional>

#include "dctts/audio.hpp"
#include "dctts/config.hpp"
#include "dctts/layers.hpp"

namespace dctts {

struct VqConfig {
    int K = 128;  // codebook size
    int d = 128;  // code dimension; conv channels ramp d/4 -> d/2 -> d
    int mel_channels = 80;
    double commitment = 0.25;
    int dead_code_steps = 100;

    static VqConfig from(const Config& cfg);
    int freq_factor() const { return 20; }
    int time_factor() const { return 2; }
    int latent_f() const { return mel_channels / freq_factor(); }
};

struct LatentGrid {
    Tensor features;  // [d, f, l]
    int orig_channels = 0;  // F
    int orig_frames = 0;    // L before padding

    int f() const { return features.dim(1); }
    int l() const { return features.dim(2); }
    int d() const { return features.dim(0); }
};

struct TokenGrid {
    std::vector<int> indices;  // flattened, position p = t*f + i
    int f = 0;
    int l = 0;
    int vocab = 0;       // K
    int orig_frames = 0;  // L before padding

    int n() const { return f * l; }
};

// Convolutional spectrogram codec: 20x frequency, 2x time downsampling into a
// K-entry codebook; nearest-neighbor quantization with straight-through
// gradients, reconstruction + codebook + commitment training loss.
class SpectrogramVq {
public:
    SpectrogramVq(const VqConfig& cfg, uint64_t seed);

    LatentGrid encode(const MelSpectrogram& mel) const;
    // nearest entry per cell, ties to the lowest index; also returns the
    // quantized grid (each cell replaced by its code vector)
    std::pair<TokenGrid, LatentGrid> quantize(const LatentGrid& z) const;
    MelSpectrogram decode(const TokenGrid& tokens) const;

    TokenGrid tokenize(const MelSpectrogram& mel) const;  // encode + quantize

    struct LossParts {
        Graph::Id total = -1;
        Graph::Id reconstruction = -1;
        Graph::Id codebook = -1;
        Graph::Id commitment = -1;
    };

    // reconstruction-mse + codebook + commitment loss; records usage for
    // dead-code tracking when training
    Graph::Id training_loss(Graph& g, const MelSpectrogram& mel, bool track_usage = true,
                            LossParts* parts = nullptr);

    // reseed codebook entries unused for dead_code_steps consecutive steps;
    // returns how many were reseeded. called once per optimizer step; keyed
    // by (seed, step) so interrupted runs resume identically.
    int end_of_step_maintenance(uint64_t seed, int64_t step);

    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    const VqConfig& config() const { return cfg_; }
    int64_t parameter_count() const { return params_.parameter_count(); }
    double flops(int frames) const;

    Tensor& usage_state() { return usage_; }  // persisted with stage-1 checkpoints

private:
    Graph::Id encoder_forward(Graph& g, Graph::Id mel_chw) const;
    Graph::Id decoder_forward(Graph& g, Graph::Id latent_chw) const;
    Tensor mel_to_chw(const MelSpectrogram& mel, int* orig_frames) const;

    VqConfig cfg_;
    ParamStore params_;
    Parameter* codebook_ = nullptr;
    Tensor usage_;  // per-entry consecutive unused step count
    std::vector<Tensor> reseed_pool_;  // encoder cells from the latest batch
};

}  // namespace dctts
