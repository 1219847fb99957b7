#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dctts/text_frontend.hpp"
#include "test_util.hpp"

using namespace dctts;

#ifndef DCTTS_SOURCE_DIR
#define DCTTS_SOURCE_DIR "."
#endif

namespace {

const Lexicon& bundled_lexicon() {
    static Lexicon lex = Lexicon::load(std::string(DCTTS_SOURCE_DIR) + "/data/lexicon.txt");
    return lex;
}

const PhonemeInventory& bundled_inventory() {
    static PhonemeInventory inv = PhonemeInventory::load(std::string(DCTTS_SOURCE_DIR) + "/data/phonemes.txt");
    return inv;
}

std::vector<std::string> to_symbols(const std::vector<int>& ids, const PhonemeInventory& inv) {
    std::vector<std::string> out;
    for (int id : ids) out.push_back(inv.symbols[static_cast<size_t>(id)]);
    return out;
}

TextEncoderConfig tiny_cfg(int vocab) {
    TextEncoderConfig cfg;
    cfg.vocab = vocab;
    cfg.width = 16;
    cfg.blocks = 2;
    cfg.heads = 2;
    cfg.ffn_inner = 24;
    return cfg;
}

}  // namespace

TEST_CASE("g2p: bundled lexicon lookup for cat") {
    const auto ids = g2p("cat", bundled_lexicon(), bundled_inventory());
    CHECK(to_symbols(ids, bundled_inventory()) == std::vector<std::string>{"K", "AE", "T"});
}

TEST_CASE("g2p: word boundary between repeated words") {
    const auto ids = g2p("cat cat", bundled_lexicon(), bundled_inventory());
    CHECK(to_symbols(ids, bundled_inventory()) ==
          std::vector<std::string>{"K", "AE", "T", "<wb>", "K", "AE", "T"});
}

TEST_CASE("g2p: empty and non-alphabetic inputs are input errors") {
    CHECK_THROWS_AS(g2p("", bundled_lexicon(), bundled_inventory()), InputError);
    CHECK_THROWS_AS(g2p("123 !?", bundled_lexicon(), bundled_inventory()), InputError);
}

TEST_CASE("g2p: punctuation strips to word boundaries; case folds") {
    const auto a = g2p("Cat, cat!", bundled_lexicon(), bundled_inventory());
    const auto b = g2p("cat cat", bundled_lexicon(), bundled_inventory());
    CHECK(a == b);
}

TEST_CASE("g2p: out-of-vocabulary words fall back to letter pseudo-phonemes") {
    const auto ids = g2p("zyx", bundled_lexicon(), bundled_inventory());
    CHECK(to_symbols(ids, bundled_inventory()) == std::vector<std::string>{"@Z", "@Y", "@X"});
}

TEST_CASE("phoneme encoder: output is N_ph x width for any N_ph") {
    TextEncoder enc(tiny_cfg(12), 3);
    for (int n : {1, 2, 7}) {
        Graph g;
        std::vector<int> ids(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) ids[static_cast<size_t>(i)] = i % 12;
        const Tensor& out = g.val(enc.content(g, ids));
        CHECK(out.dim(0) == n);
        CHECK(out.dim(1) == 16);
    }
}

TEST_CASE("phoneme encoder: permuting phonemes changes the output") {
    TextEncoder enc(tiny_cfg(12), 5);
    Graph g1, g2;
    const Tensor a = g1.val(enc.content(g1, {1, 2, 3}));
    const Tensor b = g2.val(enc.content(g2, {3, 2, 1}));
    double diff = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) diff = std::max(diff, std::fabs(a.data[i] - b.data[i]));
    CHECK(diff > 1e-6);
}

TEST_CASE("phoneme encoder: gradients through both blocks pass finite differences") {
    TextEncoder enc(tiny_cfg(8), 7);
    const std::vector<int> ids = {0, 3, 5, 2};
    SeqRng rng(9);
    Tensor probe = testutil::random_tensor({4, 16}, rng);
    auto loss_fn = [&]() {
        Graph g;
        return g.val(g.sum_all(g.mul(enc.content(g, ids), g.input(probe)))).data[0];
    };
    enc.params().zero_grads();
    {
        Graph g;
        g.backward(g.sum_all(g.mul(enc.content(g, ids), g.input(probe))));
    }
    for (const char* name : {"text/emb.table", "text/blk0.dsconv.dw", "text/blk0.attn.wq",
                             "text/blk1.ffn.w1", "text/blk1.ffn.cw", "text/blk1.attn_ln.g"}) {
        Parameter& p = enc.params().get(name);
        INFO("parameter ", name);
        CHECK(testutil::fd_max_rel_err(p, loss_fn, 1e-5, 80, 55) < 1e-4);
    }
}

TEST_CASE("acoustic extractors: three per-phoneme scalars, durations at least 1") {
    TextEncoder enc(tiny_cfg(12), 11);
    Graph g;
    Graph::Id c = enc.content(g, {0, 1, 2, 3, 4});
    const TextEncoder::Acoustic ac = enc.acoustic(g, c);
    for (Graph::Id id : {ac.energy, ac.pitch, ac.duration}) {
        CHECK(g.val(id).dim(0) == 5);
        CHECK(g.val(id).dim(1) == 1);
    }
    for (int i = 0; i < 5; ++i) {
        CHECK(g.val(ac.duration).at(i, 0) >= 1.0);
        CHECK(g.val(ac.duration).at(i, 0) <= 64.0);
    }
}

TEST_CASE("acoustic extractors: the three share no parameters") {
    TextEncoder enc(tiny_cfg(12), 13);
    const std::vector<int> ids = {0, 1, 2};
    Graph g0;
    Graph::Id c0 = enc.content(g0, ids);
    const TextEncoder::Acoustic before = enc.acoustic(g0, c0);
    const Tensor p_before = g0.val(before.pitch);
    const Tensor d_before = g0.val(before.duration);
    // perturb every energy-extractor parameter
    for (Parameter* p : enc.params().ordered())
        if (p->name.find("text/energy") != std::string::npos)
            for (double& v : p->value.data) v += 0.37;
    Graph g1;
    Graph::Id c1 = enc.content(g1, ids);
    const TextEncoder::Acoustic after = enc.acoustic(g1, c1);
    for (int i = 0; i < 3; ++i) {
        CHECK(g1.val(after.pitch).at(i, 0) == p_before.at(i, 0));
        CHECK(g1.val(after.duration).at(i, 0) == d_before.at(i, 0));
    }
    // and the energy output did change
    double diff = 0.0;
    for (int i = 0; i < 3; ++i)
        diff = std::max(diff, std::fabs(g1.val(after.energy).at(i, 0) - g0.val(before.energy).at(i, 0)));
    CHECK(diff > 1e-9);
}

TEST_CASE("build_condition: repetition arithmetic and the exact-l rule") {
    TextEncoder enc(tiny_cfg(12), 17);
    const std::vector<int> ids = {0, 1};
    Graph g;
    Graph::Id c = enc.content(g, ids);
    const TextEncoder::Acoustic ac = enc.acoustic(g, c);

    // durations [2,3] -> expanded length 5
    CHECK(g.val(enc.condition(g, c, ac, {2, 3}, -1)).dim(0) == 5);
    // all durations 1 -> expanded length N_ph
    CHECK(g.val(enc.condition(g, c, ac, {1, 1}, -1)).dim(0) == 2);
    // mismatch by +-1 resolves to exactly l
    CHECK(g.val(enc.condition(g, c, ac, {2, 3}, 6)).dim(0) == 6);
    CHECK(g.val(enc.condition(g, c, ac, {2, 3}, 4)).dim(0) == 4);
    CHECK(g.val(enc.condition(g, c, ac, {2, 3}, 5)).dim(0) == 5);
    // padded tail rows are exactly zero
    const Tensor& padded = g.val(enc.condition(g, c, ac, {2, 3}, 7));
    for (int col = 0; col < padded.dim(1); ++col) {
        CHECK(padded.at(5, col) == 0.0);
        CHECK(padded.at(6, col) == 0.0);
    }
}

TEST_CASE("build_condition: zero expanded length is an input error; columns width is d_c") {
    TextEncoder enc(tiny_cfg(12), 19);
    Graph g;
    Graph::Id c = enc.content(g, {0, 1});
    const TextEncoder::Acoustic ac = enc.acoustic(g, c);
    CHECK_THROWS_AS(enc.condition(g, c, ac, {0, 0}, -1), InputError);
    CHECK(g.val(enc.condition(g, c, ac, {3, 2}, -1)).dim(1) == 16);
}

TEST_CASE("build_condition: deterministic for fixed inputs") {
    TextEncoder enc(tiny_cfg(12), 23);
    const TextEncoder::Encoded a = enc.encode_text({1, 4, 2}, 64);
    const TextEncoder::Encoded b = enc.encode_text({1, 4, 2}, 64);
    CHECK(a.counts == b.counts);
    REQUIRE(a.columns.numel() == b.columns.numel());
    for (int64_t i = 0; i < a.columns.numel(); ++i) CHECK(a.columns.data[i] == b.columns.data[i]);
}

TEST_CASE("acoustic targets: silent span energy sits at the normalized floor") {
    AudioConfig acfg;
    Waveform w;
    w.samples.assign(static_cast<size_t>(acfg.hop_length) * 8 - 1, 0.0);
    const MelSpectrogram mel = mel_spectrogram(w, acfg);
    AcousticStats stats;
    stats.energy_mean = -5.0;
    stats.energy_std = 2.0;
    const std::vector<AlignmentSpan> align = {{0, 0, mel.frames()}};
    const AcousticTargets t = acoustic_targets(mel, w, align, acfg, stats);
    // all-floor magnitudes: log-RMS = log_min exactly, then z-normalized
    CHECK(t.energy[0] == doctest::Approx((acfg.log_min - stats.energy_mean) / stats.energy_std).epsilon(1e-9));
    CHECK_FALSE(t.voiced[0]);
}

TEST_CASE("acoustic targets: 220 Hz span pitch within one autocorrelation lag") {
    AudioConfig acfg;
    Waveform w;
    const int frames = 20;
    w.samples.resize(static_cast<size_t>(frames) * acfg.hop_length - 1);
    for (size_t i = 0; i < w.samples.size(); ++i)
        w.samples[i] = 0.7 * std::sin(2.0 * M_PI * 220.0 * static_cast<double>(i) / acfg.sample_rate);
    const MelSpectrogram mel = mel_spectrogram(w, acfg);
    AcousticStats stats;
    const std::vector<AlignmentSpan> align = {{0, 0, mel.frames()}};
    const AcousticTargets t = acoustic_targets(mel, w, align, acfg, stats);
    REQUIRE(t.voiced[0]);
    // one-lag resolution: lag 100 vs 101 at 22050 Hz
    const int lag = static_cast<int>(std::llround(acfg.sample_rate / 220.0));
    const double lo = std::log(acfg.sample_rate / static_cast<double>(lag + 1));
    const double hi = std::log(acfg.sample_rate / static_cast<double>(lag - 1));
    CHECK(t.pitch[0] >= lo);
    CHECK(t.pitch[0] <= hi);
}

TEST_CASE("acoustic targets: alignment must partition the frames") {
    AudioConfig acfg;
    Waveform w;
    w.samples.assign(static_cast<size_t>(acfg.hop_length) * 10 - 1, 0.1);
    const MelSpectrogram mel = mel_spectrogram(w, acfg);  // 10 frames
    AcousticStats stats;
    const std::vector<AlignmentSpan> good = {{0, 0, 4}, {1, 4, 10}};
    CHECK(acoustic_targets(mel, w, good, acfg, stats).duration_latent ==
          std::vector<double>{2.0, 3.0});
    const std::vector<AlignmentSpan> gap = {{0, 0, 4}, {1, 5, 10}};
    CHECK_THROWS_AS(acoustic_targets(mel, w, gap, acfg, stats), InputError);
    const std::vector<AlignmentSpan> shortfall = {{0, 0, 4}, {1, 4, 9}};
    CHECK_THROWS_AS(acoustic_targets(mel, w, shortfall, acfg, stats), InputError);
}
