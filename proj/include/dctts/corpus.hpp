#pragma once

#include <string>
#include <vector>

#include "dctts/audio.hpp"
#include "dctts/text_frontend.hpp"

namespace dctts {

struct PhonemeRule {
    std::string symbol;
    double freq_hz = 0.0;
    double amplitude = 0.0;
    int duration_frames = 0;  // mel frames
};

// Synthetic sine-corpus description: per-phoneme tone rules, a word list for
// the g2p lexicon, and utterance texts split into train/test.
struct ToyCorpusSpec {
    std::vector<PhonemeRule> phonemes;  // must include a "<wb>" rule
    std::vector<std::pair<std::string, std::vector<std::string>>> words;
    std::vector<std::string> train_texts;
    std::vector<std::string> test_texts;
    uint64_t seed = 1;
    double crossfade_ms = 5.0;

    static ToyCorpusSpec load(const std::string& path);  // JSON
    static ToyCorpusSpec builtin();
    void validate() const;
};

struct Utterance {
    std::string text;
    Waveform wave;
    std::vector<int> phoneme_ids;
    std::vector<AlignmentSpan> alignment;
    bool test_split = false;
};

struct ToyCorpus {
    PhonemeInventory inventory;
    Lexicon lexicon;
    std::vector<Utterance> utterances;
    uint64_t seed = 0;

    std::vector<const Utterance*> split(bool test) const;
};

ToyCorpus generate_toy_corpus(const ToyCorpusSpec& spec, const AudioConfig& acfg);

void save_corpus(const ToyCorpus& corpus, const std::string& dir);
ToyCorpus load_corpus(const std::string& dir);

}  // namespace dctts
