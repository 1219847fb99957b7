#pragma once

#include <memory>
#include <optional>

#include "dctts/contrastive.hpp"
#include "dctts/corpus.hpp"
#include "dctts/denoiser.hpp"
#include "dctts/vq.hpp"

namespace dctts {

// Per-utterance training view: everything stage 2 needs, precomputed once
// against the frozen stage-1 codec.
struct PreparedUtterance {
    const Utterance* source = nullptr;
    MelSpectrogram mel;
    TokenGrid tokens;
    AcousticTargets targets;
    std::vector<int> gt_counts;  // rounded latent durations for regulation
    Tensor pooled_condition;     // filled during stage 2 (for similarity weights)
};

struct TrainedModels {
    AudioConfig audio;
    VqConfig vq_cfg;
    NoiseSchedule schedule;
    std::unique_ptr<SpectrogramVq> vq;
    std::unique_ptr<TextEncoder> text;
    std::unique_ptr<Denoiser> denoiser;
    AcousticStats stats;
    ToyCorpus corpus;
    Config resolved;  // the run's effective configuration
};

struct Stage1Result {
    double initial_loss = 0.0;
    double final_loss = 0.0;
    int steps = 0;
    std::string checkpoint_path;
};

struct Stage2Result {
    double mean_first_window = 0.0;  // mean total loss over the opening window
    double mean_last_window = 0.0;   // and over the closing window
    int steps = 0;
    std::string checkpoint_path;
};

// stage 1: train the spectrogram codec on the corpus mels, freeze afterwards
Stage1Result train_stage1_vq(const Config& cfg);

// stage 2: joint text-encoder + denoiser training with VLB + TCLL + acoustic
// losses against the frozen stage-1 codec
Stage2Result train_stage2_diffusion(const Config& cfg);

// load everything a synthesis or benchmark run needs from a run directory
TrainedModels load_models(const Config& cfg, bool require_stage2 = true);

struct SynthesisResult {
    Waveform wave;
    MelSpectrogram mel;
    std::vector<int> tokens;
    int latent_l = 0;
};

SynthesisResult synthesize(TrainedModels& models, const std::string& text, int steps, uint64_t seed);

// write wav + mel tensor + token grid next to `wav_path`
void write_synthesis_artifacts(const SynthesisResult& result, const TrainedModels& models,
                               const std::string& wav_path);

// mel-generation closure for the benchmark harness (no Griffin-Lim)
std::function<MelSpectrogram(const std::string&, int, uint64_t)> make_mel_generator(TrainedModels& models);

// prepared stage-2 views, exposed for evaluation harnesses
std::vector<PreparedUtterance> prepare_utterances(const ToyCorpus& corpus, const SpectrogramVq& vq,
                                                  const AudioConfig& acfg, const AcousticStats& stats,
                                                  bool test_split);

AcousticStats compute_corpus_stats(const ToyCorpus& corpus, const AudioConfig& acfg);

// mean squared frame distance over the overlapping frame range
double mel_distance(const MelSpectrogram& a, const MelSpectrogram& b);

}  // namespace dctts
