#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dctts/contrastive.hpp"
#include "test_util.hpp"

using namespace dctts;

namespace {

DenoiserConfig tiny_cfg() {
    DenoiserConfig cfg;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.width = 8;
    cfg.vocab_k = 4;
    cfg.max_positions = 16;
    cfg.freq = 2;
    return cfg;
}

}  // namespace

TEST_CASE("condition similarity: identical, orthogonal, opposite, zero-norm") {
    Tensor a({3}, {1.0, 2.0, -1.0});
    Tensor b({3}, {2.0, 4.0, -2.0});
    CHECK(condition_similarity(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(condition_similarity(a, b) == doctest::Approx(1.0).epsilon(1e-12));
    Tensor neg({3}, {-1.0, -2.0, 1.0});
    CHECK(condition_similarity(a, neg) == doctest::Approx(-1.0).epsilon(1e-12));
    Tensor orth({3}, {2.0, -1.0, 0.0});
    CHECK(condition_similarity(a, orth) == doctest::Approx(0.0).epsilon(1e-12));
    Tensor zero({3}, {0.0, 0.0, 0.0});
    CHECK(condition_similarity(a, zero) == 0.0);
    CHECK(similarity_weight(a, neg) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(similarity_weight(a, a) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("sequence score: uniform model scores exactly -N log K") {
    // a logits row of identical values makes the softmax uniform
    Graph g;
    const int n = 6, k = 4;
    Graph::Id logits = g.input(Tensor::full({n, k}, 0.37));
    std::vector<int> z = {0, 1, 2, 3, 0, 1};
    Graph::Id score = sequence_score_from_logits(g, logits, z);
    CHECK(g.val(score).data[0] == doctest::Approx(-n * std::log(static_cast<double>(k))).epsilon(1e-12));
}

TEST_CASE("sequence score: confident correct model approaches zero from below") {
    Graph g;
    const int n = 4, k = 4;
    std::vector<int> z = {2, 0, 1, 3};
    Tensor sharp({n, k});
    for (int p = 0; p < n; ++p)
        for (int c = 0; c < k; ++c) sharp.at(p, c) = c == z[static_cast<size_t>(p)] ? 30.0 : -30.0;
    Graph::Id score = sequence_score_from_logits(g, g.input(sharp), z);
    CHECK(g.val(score).data[0] <= 0.0);
    CHECK(g.val(score).data[0] > -1e-12);
}

TEST_CASE("sequence score: corruption is shared and deterministic per seed") {
    Denoiser den(tiny_cfg(), 3);
    const NoiseSchedule s = build_linear_schedule(10, 4);
    const std::vector<int> z = {0, 1, 2, 3};
    Graph g1, g2;
    Graph::Id c1 = g1.input(Tensor::zeros({2, 8}));
    Graph::Id c2 = g2.input(Tensor::zeros({2, 8}));
    const double a = g1.val(sequence_score(g1, den, s, 4, z, c1, 99)).data[0];
    const double b = g2.val(sequence_score(g2, den, s, 4, z, c2, 99)).data[0];
    CHECK(a == b);
}

TEST_CASE("tcll: empty negatives give exactly zero") {
    CHECK(tcll_value(-5.0, {}, {}) == 0.0);
}

TEST_CASE("tcll: identical-condition negative (weight 0) contributes nothing") {
    CHECK(tcll_value(-5.0, {-1.0}, {0.0}) == 0.0);
    CHECK(tcll_value(-5.0, {-1.0, -4.0}, {0.0, 0.0}) == 0.0);
}

TEST_CASE("tcll: single negative, weight 1, equal scores -> ln 2 within 1e-12") {
    CHECK(std::fabs(tcll_value(-3.0, {-3.0}, {1.0}) - std::log(2.0)) < 1e-12);
}

TEST_CASE("tcll: invariant under adding a constant to all scores") {
    const std::vector<double> w = {0.3, 1.2, 0.8};
    const double base = tcll_value(-10.0, {-12.0, -9.0, -11.0}, w);
    for (double shift : {-7.0, 3.5, 100.0}) {
        const double shifted = tcll_value(-10.0 + shift, {-12.0 + shift, -9.0 + shift, -11.0 + shift}, w);
        CHECK(shifted == doctest::Approx(base).epsilon(1e-12));
    }
}

TEST_CASE("tcll: increasing a weighted negative's score strictly increases the loss") {
    const std::vector<double> w = {0.5, 1.0};
    const double lo = tcll_value(-5.0, {-8.0, -7.0}, w);
    const double hi = tcll_value(-5.0, {-8.0, -6.0}, w);
    CHECK(hi > lo);
    // nonnegative always
    CHECK(lo >= 0.0);
    CHECK(tcll_value(-5.0, {-50.0}, {2.0}) >= 0.0);
}

TEST_CASE("tcll: numerically stable for large score gaps") {
    const double v = tcll_value(-900.0, {-100.0}, {1.0});
    CHECK(std::isfinite(v));
    CHECK(v == doctest::Approx(800.0).epsilon(1e-9));  // log(1 + e^800) ~= 800
    CHECK(tcll_value(-5.0, {-700.0}, {1.0}) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("tcll: gradient through the denoiser passes finite differences (10 seeds)") {
    const NoiseSchedule s = build_linear_schedule(8, 4);
    for (uint64_t seed = 1; seed <= 10; ++seed) {
        Denoiser den(tiny_cfg(), seed);
        SeqRng rng(seed * 7);
        const std::vector<int> z0 = {0, 1, 2, 3};
        const std::vector<int> z1 = {3, 2, 1, 0};
        const std::vector<int> z2 = {1, 1, 2, 2};
        Tensor cond = testutil::random_tensor({2, 8}, rng);
        const int t = 1 + static_cast<int>(rng.below(8));
        const std::vector<double> weights = {0.7, 1.3};

        auto build = [&](Graph& g) {
            Graph::Id c = g.input(cond);
            Graph::Id s0 = sequence_score(g, den, s, t, z0, c, seed);
            std::vector<Graph::Id> negs = {sequence_score(g, den, s, t, z1, c, seed),
                                           sequence_score(g, den, s, t, z2, c, seed)};
            return tcll_from_scores(g, s0, negs, weights);
        };
        auto loss_fn = [&]() {
            Graph g;
            return g.val(build(g)).data[0];
        };
        den.params().zero_grads();
        {
            Graph g;
            g.backward(build(g));
        }
        for (const char* name : {"den/tok_emb.table", "den/blk0.attn.wq", "den/blk0.fuse.w", "den/head.b"}) {
            Parameter& p = den.params().get(name);
            INFO("seed ", seed, " parameter ", name);
            CHECK(testutil::fd_max_rel_err(p, loss_fn, 1e-5, 40, seed * 131) < 1e-4);
        }
    }
}
