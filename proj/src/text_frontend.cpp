#include "dctts/text_frontend.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace dctts {

PhonemeInventory PhonemeInventory::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open phoneme inventory: " + path);
    std::vector<std::string> syms;
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
        if (line.empty()) continue;
        syms.push_back(line);
    }
    return from_symbols(std::move(syms));
}

PhonemeInventory PhonemeInventory::from_symbols(std::vector<std::string> syms) {
    PhonemeInventory inv;
    inv.symbols = std::move(syms);
    for (int i = 0; i < static_cast<int>(inv.symbols.size()); ++i) {
        if (!inv.index.emplace(inv.symbols[static_cast<size_t>(i)], i).second)
            throw ConfigError("duplicate phoneme symbol: " + inv.symbols[static_cast<size_t>(i)]);
    }
    return inv;
}

int PhonemeInventory::require(const std::string& sym) const {
    auto it = index.find(sym);
    if (it == index.end()) throw InputError("phoneme not in inventory: " + sym);
    return it->second;
}

Lexicon Lexicon::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open lexicon: " + path);
    Lexicon lex;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const size_t tab = line.find('\t');
        if (tab == std::string::npos)
            throw ConfigError("lexicon line " + std::to_string(lineno) + ": expected WORD<TAB>PHONES");
        const std::string word = line.substr(0, tab);
        std::istringstream rest(line.substr(tab + 1));
        std::vector<std::string> phones;
        std::string p;
        while (rest >> p) phones.push_back(p);
        if (word.empty() || phones.empty())
            throw ConfigError("lexicon line " + std::to_string(lineno) + ": empty word or phones");
        lex.entries[word] = std::move(phones);
    }
    return lex;
}

std::vector<int> g2p(const std::string& text, const Lexicon& lex, const PhonemeInventory& inv) {
    if (text.empty()) throw InputError("g2p: empty text");
    // split on anything non-alphabetic; punctuation acts as a word boundary
    std::vector<std::string> words;
    std::string cur;
    for (char ch : text) {
        if (std::isalpha(static_cast<unsigned char>(ch))) {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        } else if (!cur.empty()) {
            words.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(cur);
    if (words.empty()) throw InputError("g2p: no alphabetic content in \"" + text + "\"");

    const int wb = inv.word_boundary();
    std::vector<int> ids;
    bool first = true;
    for (const std::string& word : words) {
        if (!first) ids.push_back(wb);
        first = false;
        std::string upper = word;
        std::transform(upper.begin(), upper.end(), upper.begin(),
                       [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
        auto it = lex.entries.find(upper);
        if (it != lex.entries.end()) {
            for (const std::string& p : it->second) ids.push_back(inv.require(p));
        } else {
            // letter fallback pseudo-phonemes
            for (char c : upper) ids.push_back(inv.require(std::string("@") + c));
        }
    }
    return ids;
}

TextEncoderConfig TextEncoderConfig::from(const Config& cfg, int vocab) {
    TextEncoderConfig t;
    t.vocab = vocab;
    t.width = static_cast<int>(cfg.get_int("text.width", t.width));
    t.blocks = static_cast<int>(cfg.get_int("text.blocks", t.blocks));
    t.heads = static_cast<int>(cfg.get_int("text.heads", t.heads));
    t.ffn_inner = static_cast<int>(cfg.get_int("text.ffn_inner", 2 * t.width));
    t.extractor_blocks = static_cast<int>(cfg.get_int("text.extractor_blocks", t.extractor_blocks));
    t.duration_max = cfg.get_double("text.duration_max", t.duration_max);
    if (t.width % t.heads != 0) throw ConfigError("text.heads must divide text.width");
    return t;
}

TextEncoder::TextEncoder(const TextEncoderConfig& cfg, uint64_t seed) : cfg_(cfg) {
    SeqRng rng(seed, /*stream=*/0x7e);
    auto add = [&](LayerSpec spec, const std::string& name) {
        layers_.push_back(std::make_unique<Layer>(spec, params_, "text/" + name, rng));
        return layers_.size() - 1;
    };
    roles_.embedding = add({.kind = LayerKind::Embedding, .in = cfg_.vocab, .out = cfg_.width}, "emb");
    for (int b = 0; b < cfg_.blocks; ++b) {
        const std::string p = "blk" + std::to_string(b) + ".";
        std::array<size_t, 5> ids{};
        ids[0] = add({.kind = LayerKind::DepthwiseSeparableConv1d, .in = cfg_.width, .kernel = cfg_.conv_kernel,
                      .pad = cfg_.conv_kernel / 2},
                     p + "dsconv");
        ids[1] = add({.kind = LayerKind::MultiHeadSelfAttention, .in = cfg_.width, .heads = cfg_.heads},
                     p + "attn");
        ids[2] = add({.kind = LayerKind::LayerNorm, .in = cfg_.width}, p + "attn_ln");
        ids[3] = add({.kind = LayerKind::Ffn, .in = cfg_.width, .kernel = cfg_.conv_kernel,
                      .inner = cfg_.ffn_inner, .ffn_conv = true},
                     p + "ffn");
        ids[4] = add({.kind = LayerKind::LayerNorm, .in = cfg_.width}, p + "ffn_ln");
        roles_.blocks.push_back(ids);
    }
    const char* names[3] = {"energy", "pitch", "duration"};
    for (int e = 0; e < 3; ++e) {
        for (int b = 0; b < cfg_.extractor_blocks; ++b) {
            const std::string p = std::string(names[e]) + std::to_string(b);
            roles_.extractors[static_cast<size_t>(e)].push_back(
                add({.kind = LayerKind::Conv1d, .in = cfg_.width, .out = cfg_.width,
                     .kernel = cfg_.conv_kernel, .pad = cfg_.conv_kernel / 2},
                    p + ".conv"));
            roles_.extractors[static_cast<size_t>(e)].push_back(
                add({.kind = LayerKind::LayerNorm, .in = cfg_.width}, p + ".ln"));
        }
        roles_.extractors[static_cast<size_t>(e)].push_back(
            add({.kind = LayerKind::Linear, .in = cfg_.width, .out = 1}, std::string(names[e]) + ".head"));
    }
    roles_.fusion = add({.kind = LayerKind::Linear, .in = cfg_.width + 3, .out = cfg_.width}, "fusion");
}

Graph::Id TextEncoder::content(Graph& g, const std::vector<int>& phoneme_ids) const {
    if (phoneme_ids.empty()) throw InputError("text encoder: empty phoneme sequence");
    Tensor ids({static_cast<int>(phoneme_ids.size())});
    for (size_t i = 0; i < phoneme_ids.size(); ++i) ids.data[i] = static_cast<double>(phoneme_ids[i]);
    Graph::Id h = layers_[roles_.embedding]->forward(g, g.input(std::move(ids)));
    for (const auto& blk : roles_.blocks) {
        h = g.gelu(layers_[blk[0]]->forward(g, h));
        Graph::Id attn = layers_[blk[1]]->forward(g, h);
        h = layers_[blk[2]]->forward(g, g.add(h, attn));
        Graph::Id ffn = layers_[blk[3]]->forward(g, h);
        h = layers_[blk[4]]->forward(g, g.add(h, ffn));
    }
    return h;
}

TextEncoder::Acoustic TextEncoder::acoustic(Graph& g, Graph::Id content) const {
    Acoustic out;
    Graph::Id* slots[3] = {&out.energy, &out.pitch, &out.duration};
    for (int e = 0; e < 3; ++e) {
        Graph::Id h = content;
        const auto& ids = roles_.extractors[static_cast<size_t>(e)];
        for (size_t i = 0; i + 1 < ids.size(); i += 2) {
            h = layers_[ids[i]]->forward(g, h);
            h = layers_[ids[i + 1]]->forward(g, h);
            h = g.relu(h);
        }
        Graph::Id head = layers_[ids.back()]->forward(g, h);
        if (e == 2) head = g.clamp(g.exp(head), cfg_.duration_min, cfg_.duration_max);
        *slots[e] = head;
    }
    return out;
}

Graph::Id TextEncoder::condition(Graph& g, Graph::Id content, const Acoustic& ac,
                                 const std::vector<int>& repeat_counts, int target_l) const {
    Graph::Id cat = g.concat_cols({content, ac.energy, ac.pitch, ac.duration});
    Graph::Id expanded = g.repeat_rows(cat, repeat_counts);
    Graph::Id projected = layers_[roles_.fusion]->forward(g, expanded);
    if (target_l >= 0 && target_l != g.val(projected).dim(0)) projected = g.resize_rows(projected, target_l);
    return projected;
}

TextEncoder::Encoded TextEncoder::encode_text(const std::vector<int>& phoneme_ids, int max_l) const {
    Graph g;
    Graph::Id c = content(g, phoneme_ids);
    Acoustic ac = acoustic(g, c);
    const Tensor& dur = g.val(ac.duration);
    std::vector<int> counts(phoneme_ids.size());
    int total = 0;
    for (size_t i = 0; i < counts.size(); ++i) {
        counts[i] = static_cast<int>(std::llround(dur.at(static_cast<int>(i), 0)));
        counts[i] = std::max(1, counts[i]);
        total += counts[i];
    }
    if (max_l > 0 && total > max_l) {
        // trim the longest counts until the condition fits the position table
        while (total > max_l) {
            size_t argmax = 0;
            for (size_t i = 1; i < counts.size(); ++i)
                if (counts[i] > counts[argmax]) argmax = i;
            if (counts[argmax] <= 1) break;
            --counts[argmax];
            --total;
        }
    }
    Graph::Id cond = condition(g, c, ac, counts, -1);
    Encoded out;
    out.columns = g.val(cond);
    out.pooled = mean_pool_columns(out.columns);
    out.counts = std::move(counts);
    if (!out.columns.all_finite()) throw NumericError("text encoder: non-finite condition");
    return out;
}

double TextEncoder::flops(int n_ph) const {
    double f = 0.0;
    for (const auto& layer : layers_) f += layer->flops(n_ph);
    return f;
}

Tensor mean_pool_columns(const Tensor& columns) {
    const int n = columns.dim(0), d = columns.dim(1);
    Tensor pooled({d});
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c) pooled.at(c) += columns.at(r, c);
    for (int c = 0; c < d; ++c) pooled.at(c) /= n;
    return pooled;
}

AcousticStats AcousticStats::from(const Config& cfg) {
    AcousticStats s;
    s.energy_mean = cfg.get_double("acoustic.energy_mean", s.energy_mean);
    s.energy_std = cfg.get_double("acoustic.energy_std", s.energy_std);
    s.pitch_mean = cfg.get_double("acoustic.pitch_mean", s.pitch_mean);
    s.pitch_std = cfg.get_double("acoustic.pitch_std", s.pitch_std);
    s.duration_mean = cfg.get_double("acoustic.duration_mean", s.duration_mean);
    s.duration_std = cfg.get_double("acoustic.duration_std", s.duration_std);
    if (s.energy_std <= 0.0 || s.pitch_std <= 0.0 || s.duration_std <= 0.0)
        throw ConfigError("acoustic stats: standard deviations must be positive");
    return s;
}

void AcousticStats::store(Config& cfg) const {
    cfg.set_double("acoustic.energy_mean", energy_mean);
    cfg.set_double("acoustic.energy_std", energy_std);
    cfg.set_double("acoustic.pitch_mean", pitch_mean);
    cfg.set_double("acoustic.pitch_std", pitch_std);
    cfg.set_double("acoustic.duration_mean", duration_mean);
    cfg.set_double("acoustic.duration_std", duration_std);
}

RawSpanFeatures span_features(const MelSpectrogram& mel, const Waveform& wave,
                              const AlignmentSpan& span, const AudioConfig& acfg) {
    if (span.start_frame < 0 || span.end_frame > mel.frames() || span.start_frame >= span.end_frame)
        throw InputError("span_features: span outside the spectrogram");
    RawSpanFeatures out;

    // energy: log RMS of linear mel magnitudes across the span
    const double log_span = acfg.log_max - acfg.log_min;
    double sq = 0.0;
    int64_t count = 0;
    for (int t = span.start_frame; t < span.end_frame; ++t)
        for (int c = 0; c < mel.channels(); ++c) {
            const double lm = acfg.log_min + (mel.values.at(c, t) + 1.0) * 0.5 * log_span;
            const double mag = std::exp(lm);
            sq += mag * mag;
            ++count;
        }
    out.energy = 0.5 * std::log(std::max(sq / static_cast<double>(count), 1e-300));

    // pitch: autocorrelation peak over the span's samples
    const int64_t s0 = static_cast<int64_t>(span.start_frame) * acfg.hop_length;
    const int64_t s1 = std::min<int64_t>(static_cast<int64_t>(span.end_frame) * acfg.hop_length,
                                         static_cast<int64_t>(wave.samples.size()));
    const int64_t n = s1 - s0;
    const int lag_min = std::max(2, acfg.sample_rate / 4000);
    const int lag_max = acfg.sample_rate / 80;
    if (n > 2 * lag_min) {
        const double* x = wave.samples.data() + s0;
        double r0 = 0.0;
        for (int64_t i = 0; i < n; ++i) r0 += x[i] * x[i];
        double best = 0.0;
        int best_lag = 0;
        for (int lag = lag_min; lag <= lag_max && lag < n; ++lag) {
            double r = 0.0;
            for (int64_t i = 0; i + lag < n; ++i) r += x[i] * x[i + lag];
            if (r > best) {
                best = r;
                best_lag = lag;
            }
        }
        if (best_lag > 0 && r0 > 1e-9 && best / r0 > 0.4) {
            out.voiced = true;
            out.pitch = std::log(static_cast<double>(acfg.sample_rate) / best_lag);
        }
    }

    out.duration_latent = static_cast<double>(span.end_frame - span.start_frame) / 2.0;
    return out;
}

AcousticTargets acoustic_targets(const MelSpectrogram& mel, const Waveform& wave,
                                 const std::vector<AlignmentSpan>& alignment,
                                 const AudioConfig& acfg, const AcousticStats& stats) {
    if (alignment.empty()) throw InputError("acoustic_targets: empty alignment");
    // spans must partition [0, frames)
    int cursor = 0;
    for (const AlignmentSpan& s : alignment) {
        if (s.start_frame != cursor)
            throw InputError("acoustic_targets: alignment gap at frame " + std::to_string(cursor));
        cursor = s.end_frame;
    }
    if (cursor != mel.frames())
        throw InputError("acoustic_targets: alignment covers " + std::to_string(cursor) + " of " +
                         std::to_string(mel.frames()) + " frames");

    AcousticTargets out;
    for (const AlignmentSpan& s : alignment) {
        const RawSpanFeatures f = span_features(mel, wave, s, acfg);
        out.energy.push_back((f.energy - stats.energy_mean) / stats.energy_std);
        out.pitch.push_back(f.voiced ? (f.pitch - stats.pitch_mean) / stats.pitch_std : 0.0);
        out.voiced.push_back(f.voiced);
        out.duration_latent.push_back(f.duration_latent);
        out.duration.push_back((f.duration_latent - stats.duration_mean) / stats.duration_std);
    }
    return out;
}

}  // namespace dctts
