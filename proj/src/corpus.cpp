#include "dctts/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>

namespace dctts {

namespace fs = std::filesystem;
using nlohmann::json;

ToyCorpusSpec ToyCorpusSpec::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open corpus spec: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("corpus spec parse error in " + path + ": " + e.what());
    }
    ToyCorpusSpec spec;
    spec.seed = j.value("seed", 1u);
    spec.crossfade_ms = j.value("crossfade_ms", 5.0);
    for (const auto& p : j.at("phonemes"))
        spec.phonemes.push_back({p.at("symbol").get<std::string>(), p.at("freq").get<double>(),
                                 p.at("amp").get<double>(), p.at("frames").get<int>()});
    for (const auto& [word, phones] : j.at("words").items())
        spec.words.emplace_back(word, phones.get<std::vector<std::string>>());
    spec.train_texts = j.at("train").get<std::vector<std::string>>();
    spec.test_texts = j.at("test").get<std::vector<std::string>>();
    spec.validate();
    return spec;
}

ToyCorpusSpec ToyCorpusSpec::builtin() {
    ToyCorpusSpec spec;
    spec.seed = 1;
    spec.phonemes = {
        {"<wb>", 100.0, 0.0, 4}, {"A", 220.0, 0.62, 4}, {"B", 294.0, 0.58, 4},
        {"D", 392.0, 0.60, 6},   {"E", 494.0, 0.55, 4}, {"I", 588.0, 0.58, 4},
        {"K", 700.0, 0.52, 6},   {"M", 840.0, 0.55, 4}, {"O", 1000.0, 0.50, 4},
        {"S", 1200.0, 0.48, 6},  {"T", 1450.0, 0.45, 4}, {"U", 1750.0, 0.42, 4},
    };
    spec.words = {
        {"ab", {"A", "B"}},      {"dek", {"D", "E", "K"}}, {"im", {"I", "M"}},
        {"osu", {"O", "S", "U"}}, {"tad", {"T", "A", "D"}}, {"uke", {"U", "K", "E"}},
        {"mio", {"M", "I", "O"}}, {"seb", {"S", "E", "B"}}, {"kato", {"K", "A", "T", "O"}},
        {"dui", {"D", "U", "I"}},
    };
    spec.train_texts = {
        "ab dek",      "im osu",      "tad uke",     "mio seb",     "ab im",
        "dek osu",     "uke mio",     "seb tad",     "ab osu tad",  "dek im uke",
        "mio ab",      "seb dek uke", "osu mio tad", "im seb",      "kato dui",
        "dui ab",      "kato seb",    "uke dui",     "tad kato",    "mio dui osu",
    };
    spec.test_texts = {"dek ab", "im tad uke", "osu kato", "seb mio dek", "uke seb dui"};
    spec.validate();
    return spec;
}

void ToyCorpusSpec::validate() const {
    if (phonemes.empty()) throw ConfigError("corpus spec: no phonemes");
    bool has_wb = false;
    for (const PhonemeRule& r : phonemes) {
        if (r.symbol == "<wb>") has_wb = true;
        if (r.duration_frames < 4)
            throw ConfigError("corpus spec: phoneme " + r.symbol + " duration below 4 frames");
        if (r.freq_hz < 80.0 || r.freq_hz > 4000.0)
            throw ConfigError("corpus spec: phoneme " + r.symbol + " frequency outside [80, 4000] Hz");
        if (r.amplitude < 0.0 || r.amplitude > 1.0)
            throw ConfigError("corpus spec: phoneme " + r.symbol + " amplitude outside [0, 1]");
    }
    if (!has_wb) throw ConfigError("corpus spec: missing <wb> rule");
    if (train_texts.empty() || test_texts.empty()) throw ConfigError("corpus spec: empty utterance list");
    for (const auto& [word, phones] : words)
        for (const std::string& p : phones) {
            bool found = false;
            for (const PhonemeRule& r : phonemes) found |= r.symbol == p;
            if (!found) throw ConfigError("corpus spec: word " + word + " uses unknown phoneme " + p);
        }
}

std::vector<const Utterance*> ToyCorpus::split(bool test) const {
    std::vector<const Utterance*> out;
    for (const Utterance& u : utterances)
        if (u.test_split == test) out.push_back(&u);
    return out;
}

namespace {

Utterance synthesize_utterance(const std::string& text, const ToyCorpusSpec& spec,
                               const ToyCorpus& corpus, const AudioConfig& acfg, uint64_t utt_index) {
    Utterance utt;
    utt.text = text;
    utt.phoneme_ids = g2p(text, corpus.lexicon, corpus.inventory);

    std::vector<const PhonemeRule*> rules;
    for (int id : utt.phoneme_ids) {
        const std::string& sym = corpus.inventory.symbols[static_cast<size_t>(id)];
        const PhonemeRule* rule = nullptr;
        for (const PhonemeRule& r : spec.phonemes)
            if (r.symbol == sym) rule = &r;
        if (!rule) throw ConfigError("corpus: no synthesis rule for phoneme " + sym);
        rules.push_back(rule);
    }

    // segment sample boundaries at exact frame multiples
    const int hop = acfg.hop_length;
    std::vector<int64_t> starts(rules.size() + 1, 0);
    int frame_cursor = 0;
    for (size_t i = 0; i < rules.size(); ++i) {
        utt.alignment.push_back({utt.phoneme_ids[i], frame_cursor, frame_cursor + rules[i]->duration_frames});
        frame_cursor += rules[i]->duration_frames;
        starts[i + 1] = static_cast<int64_t>(frame_cursor) * hop;
    }
    const int64_t total = starts.back() - 1;  // one short of a full frame grid: frames == sum(dur)

    // linear crossfade envelopes around interior boundaries, constant-sum
    const int64_t fade = std::llround(spec.crossfade_ms * 1e-3 * acfg.sample_rate);
    utt.wave.sample_rate = acfg.sample_rate;
    utt.wave.samples.assign(static_cast<size_t>(total), 0.0);
    for (size_t i = 0; i < rules.size(); ++i) {
        const double phase = 2.0 * M_PI * rng::uniform(corpus.seed, 0xF0, utt_index, i);
        const double w = 2.0 * M_PI * rules[i]->freq_hz / acfg.sample_rate;
        const double amp = rules[i]->amplitude;
        const int64_t seg0 = starts[i], seg1 = starts[i + 1];
        const int64_t lo = i == 0 ? seg0 : seg0 - fade / 2;
        const int64_t hi = i + 1 == rules.size() ? seg1 : seg1 + fade / 2;
        for (int64_t n = std::max<int64_t>(0, lo); n < std::min(total, hi); ++n) {
            double env = 1.0;
            if (i > 0 && n < seg0 + fade - fade / 2)
                env = std::min(env, (static_cast<double>(n - seg0) + static_cast<double>(fade) / 2) / fade);
            if (i + 1 < rules.size() && n >= seg1 - fade / 2)
                env = std::min(env, (static_cast<double>(seg1 - n) + static_cast<double>(fade) / 2) / fade);
            utt.wave.samples[static_cast<size_t>(n)] += env * amp * std::sin(w * static_cast<double>(n) + phase);
        }
    }
    return utt;
}

}  // namespace

ToyCorpus generate_toy_corpus(const ToyCorpusSpec& spec, const AudioConfig& acfg) {
    spec.validate();
    ToyCorpus corpus;
    corpus.seed = spec.seed;

    // inventory: corpus phonemes first, then letter fallbacks for OOV input
    std::vector<std::string> syms;
    for (const PhonemeRule& r : spec.phonemes) syms.push_back(r.symbol);
    for (char c = 'A'; c <= 'Z'; ++c) syms.push_back(std::string("@") + c);
    corpus.inventory = PhonemeInventory::from_symbols(std::move(syms));

    for (const auto& [word, phones] : spec.words) {
        std::string upper = word;
        std::transform(upper.begin(), upper.end(), upper.begin(),
                       [](unsigned char ch) { return static_cast<char>(std::toupper(ch)); });
        corpus.lexicon.entries[upper] = phones;
    }

    uint64_t index = 0;
    for (const std::string& text : spec.train_texts) {
        corpus.utterances.push_back(synthesize_utterance(text, spec, corpus, acfg, index++));
        corpus.utterances.back().test_split = false;
    }
    for (const std::string& text : spec.test_texts) {
        corpus.utterances.push_back(synthesize_utterance(text, spec, corpus, acfg, index++));
        corpus.utterances.back().test_split = true;
    }
    return corpus;
}

void save_corpus(const ToyCorpus& corpus, const std::string& dir) {
    fs::create_directories(dir);
    {
        std::ofstream ph(fs::path(dir) / "phonemes.txt");
        for (const std::string& s : corpus.inventory.symbols) ph << s << "\n";
    }
    {
        std::ofstream lex(fs::path(dir) / "lexicon.txt");
        lex << "# generated corpus lexicon\n";
        for (const auto& [word, phones] : corpus.lexicon.entries) {
            lex << word << "\t";
            for (size_t i = 0; i < phones.size(); ++i) lex << (i ? " " : "") << phones[i];
            lex << "\n";
        }
    }
    json manifest;
    manifest["seed"] = corpus.seed;
    manifest["utterances"] = json::array();
    char name[32];
    for (size_t i = 0; i < corpus.utterances.size(); ++i) {
        const Utterance& u = corpus.utterances[i];
        std::snprintf(name, sizeof name, "utt_%03zu.wav", i);
        wav::write((fs::path(dir) / name).string(), u.wave);
        json ju;
        ju["text"] = u.text;
        ju["wav"] = name;
        ju["split"] = u.test_split ? "test" : "train";
        ju["phonemes"] = u.phoneme_ids;
        json spans = json::array();
        for (const AlignmentSpan& s : u.alignment) spans.push_back({s.phoneme_id, s.start_frame, s.end_frame});
        ju["alignment"] = spans;
        manifest["utterances"].push_back(std::move(ju));
    }
    std::ofstream mf(fs::path(dir) / "corpus.json");
    mf << manifest.dump(1) << "\n";
    if (!mf) throw ConfigError("cannot write corpus manifest in " + dir);
}

ToyCorpus load_corpus(const std::string& dir) {
    ToyCorpus corpus;
    corpus.inventory = PhonemeInventory::load((fs::path(dir) / "phonemes.txt").string());
    corpus.lexicon = Lexicon::load((fs::path(dir) / "lexicon.txt").string());
    std::ifstream mf(fs::path(dir) / "corpus.json");
    if (!mf) throw ConfigError("cannot open corpus manifest in " + dir);
    json manifest;
    mf >> manifest;
    corpus.seed = manifest.value("seed", 0u);
    for (const auto& ju : manifest.at("utterances")) {
        Utterance u;
        u.text = ju.at("text").get<std::string>();
        u.wave = wav::read((fs::path(dir) / ju.at("wav").get<std::string>()).string());
        u.test_split = ju.at("split").get<std::string>() == "test";
        u.phoneme_ids = ju.at("phonemes").get<std::vector<int>>();
        for (const auto& span : ju.at("alignment"))
            u.alignment.push_back({span.at(0).get<int>(), span.at(1).get<int>(), span.at(2).get<int>()});
        corpus.utterances.push_back(std::move(u));
    }
    return corpus;
}

}  // namespace dctts
