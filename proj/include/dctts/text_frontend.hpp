#pragma once

#include <array>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "dctts/audio.hpp"
#include "dctts/config.hpp"
#include "dctts/layers.hpp"

namespace dctts {

// Phoneme inventory file: one symbol per line, index = line number.
struct PhonemeInventory {
    std::vector<std::string> symbols;
    std::map<std::string, int> index;

    static PhonemeInventory load(const std::string& path);
    static PhonemeInventory from_symbols(std::vector<std::string> syms);

    int size() const { return static_cast<int>(symbols.size()); }
    bool has(const std::string& sym) const { return index.count(sym) != 0; }
    int require(const std::string& sym) const;
    int word_boundary() const { return require("<wb>"); }
};

// Lexicon file: UTF-8 lines "WORD<TAB>PH1 PH2 ...", '#' comments.
struct Lexicon {
    std::map<std::string, std::vector<std::string>> entries;

    static Lexicon load(const std::string& path);
};

// Lowercases, strips punctuation to word boundaries, looks words up in the
// lexicon, falls back to per-letter pseudo-phonemes ("@A".."@Z") for OOV
// words, and inserts <wb> between words.
std::vector<int> g2p(const std::string& text, const Lexicon& lex, const PhonemeInventory& inv);

struct TextEncoderConfig {
    int vocab = 0;   // phoneme inventory size
    int width = 128;
    int blocks = 2;
    int heads = 4;
    int ffn_inner = 256;
    int conv_kernel = 3;
    int extractor_blocks = 2;
    double duration_min = 1.0;
    double duration_max = 64.0;

    static TextEncoderConfig from(const Config& cfg, int vocab);
};

// Phoneme content encoder plus three parallel acoustic extractors and the
// condition fusion/length-regulation head.
class TextEncoder {
public:
    TextEncoder(const TextEncoderConfig& cfg, uint64_t seed);

    Graph::Id content(Graph& g, const std::vector<int>& phoneme_ids) const;  // [N_ph, width]

    struct Acoustic {
        Graph::Id energy = -1;    // [N_ph, 1], normalized units
        Graph::Id pitch = -1;     // [N_ph, 1], normalized units
        Graph::Id duration = -1;  // [N_ph, 1], latent frames in [1, 64]
    };
    Acoustic acoustic(Graph& g, Graph::Id content) const;

    // concat [content || e || p || d] -> regulate by repeat counts ->
    // project to width -> resize to target_l (when >= 0)
    Graph::Id condition(Graph& g, Graph::Id content, const Acoustic& ac,
                        const std::vector<int>& repeat_counts, int target_l = -1) const;

    // full inference path: returns condition columns [l, width] and the
    // rounded per-phoneme durations used for regulation
    struct Encoded {
        Tensor columns;            // [l, width]
        Tensor pooled;             // [width]
        std::vector<int> counts;   // rounded predicted durations
    };
    Encoded encode_text(const std::vector<int>& phoneme_ids, int max_l) const;

    const TextEncoderConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    int64_t parameter_count() const { return params_.parameter_count(); }
    double flops(int n_ph) const;

private:
    TextEncoderConfig cfg_;
    ParamStore params_;
    std::vector<std::unique_ptr<Layer>> layers_;  // owned building blocks
    // indices into layers_ per role
    struct {
        size_t embedding = 0;
        std::vector<std::array<size_t, 5>> blocks;  // dsconv, attn, attn_ln, ffn, ffn_ln
        std::array<std::vector<size_t>, 3> extractors;  // per extractor: conv/ln pairs then head
        size_t fusion = 0;
    } roles_;
};

// mean pooled-condition columns, used by similarity weighting
Tensor mean_pool_columns(const Tensor& columns);

struct AlignmentSpan {
    int phoneme_id = 0;
    int start_frame = 0;  // [start, end) in mel frames
    int end_frame = 0;
};

struct AcousticStats {
    double energy_mean = 0.0, energy_std = 1.0;
    double pitch_mean = 0.0, pitch_std = 1.0;
    double duration_mean = 0.0, duration_std = 1.0;

    static AcousticStats from(const Config& cfg);
    void store(Config& cfg) const;
};

struct AcousticTargets {
    std::vector<double> energy;           // z-normalized log-RMS magnitude
    std::vector<double> pitch;            // z-normalized log-Hz, 0 where unvoiced
    std::vector<double> duration;         // z-normalized latent-frame counts
    std::vector<double> duration_latent;  // raw latent-frame counts
    std::vector<bool> voiced;
};

// raw (un-normalized) per-span features; exposed for corpus statistics
struct RawSpanFeatures {
    double energy = 0.0;
    double pitch = 0.0;
    bool voiced = false;
    double duration_latent = 0.0;
};
RawSpanFeatures span_features(const MelSpectrogram& mel, const Waveform& wave,
                              const AlignmentSpan& span, const AudioConfig& acfg);

AcousticTargets acoustic_targets(const MelSpectrogram& mel, const Waveform& wave,
                                 const std::vector<AlignmentSpan>& alignment,
                                 const AudioConfig& acfg, const AcousticStats& stats);

}  // namespace dctts
