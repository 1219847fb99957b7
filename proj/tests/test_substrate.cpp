#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "dctts/layers.hpp"
#include "dctts/params.hpp"
#include "test_util.hpp"

using namespace dctts;
using testutil::fd_max_rel_err;
using testutil::random_tensor;

namespace {

// wraps a layer forward into a scalar via a fixed random weighting so the
// gradient of every output element is exercised
double layer_loss(const Layer& layer, const Tensor& input, const Tensor& probe_w, ParamStore& store,
                  const Tensor* aux_in = nullptr) {
    Graph g;
    Graph::Id x = g.input(input);
    Graph::Id aux = aux_in ? g.input(*aux_in) : -1;
    Graph::Id y = layer.forward(g, x, aux);
    Graph::Id w = g.input(probe_w);
    Graph::Id loss = g.sum_all(g.mul(y, w));
    (void)store;
    return g.val(loss).data[0];
}

void check_layer_gradients(LayerSpec spec, std::vector<int> in_dims, uint64_t seed,
                           std::vector<int> aux_dims = {}) {
    SeqRng rng(seed);
    ParamStore store;
    Layer layer(spec, store, "probe", rng);
    Tensor input = random_tensor(in_dims, rng);
    if (spec.kind == LayerKind::Relu) {
        // keep inputs away from the kink so central differences are clean
        for (double& v : input.data)
            if (std::fabs(v) < 0.01) v += 0.05;
    }
    Tensor aux;
    if (!aux_dims.empty()) aux = random_tensor(aux_dims, rng);

    // analytic pass: also checks gradient w.r.t. the input itself by
    // promoting it to a parameter
    ParamStore probe_store;
    SeqRng zrng(seed + 1);
    Parameter& xin = probe_store.create("x", in_dims, Init::Zeros, zrng);
    xin.value = input;

    // forward shape first, then build probe weights
    Tensor probe_w;
    {
        Graph g;
        Graph::Id y = layer.forward(g, g.param(xin), aux_dims.empty() ? -1 : g.input(aux));
        probe_w = random_tensor(g.val(y).dims, zrng);
    }

    auto loss_fn = [&]() {
        Graph g;
        Graph::Id y = layer.forward(g, g.param(xin), aux_dims.empty() ? -1 : g.input(aux));
        return g.val(g.sum_all(g.mul(y, g.input(probe_w)))).data[0];
    };

    store.zero_grads();
    probe_store.zero_grads();
    {
        Graph g;
        Graph::Id y = layer.forward(g, g.param(xin), aux_dims.empty() ? -1 : g.input(aux));
        Graph::Id loss = g.sum_all(g.mul(y, g.input(probe_w)));
        g.backward(loss);
    }
    const double tol = 1e-4;
    CHECK(fd_max_rel_err(xin, loss_fn) < tol);
    for (Parameter* p : store.ordered()) {
        INFO("parameter ", p->name);
        CHECK(fd_max_rel_err(*p, loss_fn) < tol);
    }
}

}  // namespace

TEST_CASE("gradient check: every layer kind, 10 seeds") {
    for (uint64_t seed = 1; seed <= 10; ++seed) {
        check_layer_gradients({.kind = LayerKind::Linear, .in = 5, .out = 4}, {3, 5}, seed);
        check_layer_gradients({.kind = LayerKind::Conv1d, .in = 3, .out = 4, .kernel = 3, .stride = 1, .pad = 1},
                              {6, 3}, seed);
        check_layer_gradients({.kind = LayerKind::DepthwiseSeparableConv1d, .in = 4, .kernel = 3, .pad = 1},
                              {6, 4}, seed);
        check_layer_gradients({.kind = LayerKind::LayerNorm, .in = 6}, {4, 6}, seed);
        check_layer_gradients({.kind = LayerKind::AdaptiveLayerNorm, .in = 5, .aux_dim = 4}, {3, 5}, seed, {1, 4});
        check_layer_gradients({.kind = LayerKind::MultiHeadSelfAttention, .in = 6, .heads = 2}, {5, 6}, seed);
        check_layer_gradients({.kind = LayerKind::Ffn, .in = 4, .kernel = 3, .inner = 6, .ffn_conv = true},
                              {5, 4}, seed);
        check_layer_gradients({.kind = LayerKind::Gelu}, {4, 5}, seed);
        check_layer_gradients({.kind = LayerKind::Relu}, {4, 5}, seed);
        check_layer_gradients({.kind = LayerKind::Softmax}, {4, 5}, seed);
        // embedding: gradient w.r.t. the table
        {
            SeqRng rng(seed);
            ParamStore store;
            Layer emb({.kind = LayerKind::Embedding, .in = 7, .out = 4}, store, "emb", rng);
            Tensor ids({3}, {0.0, 5.0, 5.0});
            Tensor probe = random_tensor({3, 4}, rng);
            auto loss_fn = [&]() {
                Graph g;
                return g.val(g.sum_all(g.mul(emb.forward(g, g.input(ids)), g.input(probe)))).data[0];
            };
            store.zero_grads();
            {
                Graph g;
                g.backward(g.sum_all(g.mul(emb.forward(g, g.input(ids)), g.input(probe))));
            }
            for (Parameter* p : store.ordered()) CHECK(fd_max_rel_err(*p, loss_fn) < 1e-4);
        }
    }
}

TEST_CASE("gradient check: 2-d convolutions used by the vq codec") {
    for (uint64_t seed = 1; seed <= 3; ++seed) {
        SeqRng rng(seed);
        ParamStore store;
        Parameter& w = store.create("w", {3, 2, 2, 3}, Init::FanInUniform, rng);
        Parameter& b = store.create("b", {3}, Init::Zeros, rng);
        Parameter& wt = store.create("wt", {3, 2, 2, 3}, Init::FanInUniform, rng);
        Parameter& bt = store.create("bt", {2}, Init::Zeros, rng);
        Parameter& x = store.create("x", {2, 4, 6}, Init::FanInUniform, rng);
        Tensor probe;
        auto build = [&](Graph& g) {
            Graph::Id h = g.conv2d(g.param(x), g.param(w), g.param(b), 2, 1, 0, 1);
            return g.conv2d_transpose(h, g.param(wt), g.param(bt), 2, 1, 0, 1);
        };
        {
            Graph g;
            probe = random_tensor(g.val(build(g)).dims, rng);
        }
        auto loss_fn = [&]() {
            Graph g;
            return g.val(g.sum_all(g.mul(build(g), g.input(probe)))).data[0];
        };
        store.zero_grads();
        {
            Graph g;
            g.backward(g.sum_all(g.mul(build(g), g.input(probe))));
        }
        for (Parameter* p : store.ordered()) {
            INFO("parameter ", p->name);
            CHECK(fd_max_rel_err(*p, loss_fn) < 1e-4);
        }
    }
}

TEST_CASE("forward: linear identity maps x to x") {
    SeqRng rng(1);
    ParamStore store;
    Layer lin({.kind = LayerKind::Linear, .in = 4, .out = 4}, store, "lin", rng);
    Parameter& w = store.get("lin.w");
    std::fill(w.value.data.begin(), w.value.data.end(), 0.0);
    for (int i = 0; i < 4; ++i) w.value.at(i, i) = 1.0;
    Graph g;
    Tensor x = random_tensor({3, 4}, rng);
    Graph::Id y = lin.forward(g, g.input(x));
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(g.val(y).data[i] == doctest::Approx(x.data[i]).epsilon(1e-15));
}

TEST_CASE("forward: layer norm of a constant row is zero before affine") {
    Graph g;
    Graph::Id x = g.input(Tensor::full({2, 8}, 3.7));
    Graph::Id y = g.ln_norm(x, 1e-5);
    for (double v : g.val(y).data) CHECK(std::fabs(v) < 1e-9);
}

TEST_CASE("forward: layer norm row mean below 1e-10, softmax rows sum to 1 within 1e-12") {
    SeqRng rng(7);
    Graph g;
    Tensor x = random_tensor({6, 16}, rng, -3.0, 3.0);
    Graph::Id normed = g.ln_norm(g.input(x), 1e-5);
    for (int r = 0; r < 6; ++r) {
        double mu = 0.0;
        for (int c = 0; c < 16; ++c) mu += g.val(normed).at(r, c);
        CHECK(std::fabs(mu / 16.0) < 1e-10);
    }
    Graph::Id sm = g.softmax_rows(g.input(x));
    for (int r = 0; r < 6; ++r) {
        double s = 0.0;
        for (int c = 0; c < 16; ++c) s += g.val(sm).at(r, c);
        CHECK(std::fabs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("forward: uniform softmax when all keys equal -> attention output is mean of values") {
    SeqRng rng(3);
    Graph g;
    Tensor q = random_tensor({5, 4}, rng);
    Tensor k = Tensor::full({5, 4}, 0.3);
    Tensor v = random_tensor({5, 4}, rng);
    Graph::Id scores = g.scale(g.matmul_nt(g.input(q), g.input(k)), 0.5);
    Graph::Id probs = g.softmax_rows(scores);
    Graph::Id out = g.matmul(probs, g.input(v));
    for (int c = 0; c < 4; ++c) {
        double mean = 0.0;
        for (int r = 0; r < 5; ++r) mean += v.at(r, c);
        mean /= 5.0;
        for (int r = 0; r < 5; ++r) CHECK(g.val(out).at(r, c) == doctest::Approx(mean).epsilon(1e-12));
    }
}

TEST_CASE("forward: dimension mismatch raises a configuration error with both shapes") {
    SeqRng rng(1);
    ParamStore store;
    Layer lin({.kind = LayerKind::Linear, .in = 4, .out = 4}, store, "lin", rng);
    Graph g;
    Graph::Id x = g.input(Tensor::zeros({3, 5}));
    try {
        lin.forward(g, x);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("(3,5)") != std::string::npos);
        CHECK(msg.find("(4,4)") != std::string::npos);
    }
}

TEST_CASE("backward: loss = sum(W*x) gives dW = outer(1, x); zero loss gives zero grads") {
    SeqRng rng(2);
    ParamStore store;
    Parameter& w = store.create("w", {3, 4}, Init::FanInUniform, rng);
    Tensor x = random_tensor({1, 4}, rng);
    {
        Graph g;
        Graph::Id y = g.linear(g.input(x), g.param(w), -1);
        g.backward(g.sum_all(y));
        for (int o = 0; o < 3; ++o)
            for (int i = 0; i < 4; ++i) CHECK(w.grad.at(o, i) == doctest::Approx(x.at(0, i)).epsilon(1e-15));
    }
    store.zero_grads();
    {
        Graph g;
        Graph::Id y = g.linear(g.input(x), g.param(w), -1);
        g.backward(g.sum_all(g.scale(y, 0.0)));
        for (double v : w.grad.data) CHECK(v == 0.0);
    }
}

TEST_CASE("backward: usage errors for consumed or empty tapes") {
    Graph g;
    CHECK_THROWS_AS(g.backward(0), UsageError);
    SeqRng rng(1);
    ParamStore store;
    Parameter& w = store.create("w", {2, 2}, Init::FanInUniform, rng);
    Graph g2;
    Graph::Id loss = g2.sum_all(g2.param(w));
    g2.backward(loss);
    CHECK_THROWS_AS(g2.backward(loss), UsageError);
}

TEST_CASE("determinism: same seed gives bit-identical init and forward") {
    auto run = [](uint64_t seed) {
        SeqRng rng(seed);
        ParamStore store;
        Layer attn({.kind = LayerKind::MultiHeadSelfAttention, .in = 8, .heads = 2}, store, "attn", rng);
        Graph g;
        Tensor x = random_tensor({4, 8}, rng);
        return g.val(attn.forward(g, g.input(x)));
    };
    Tensor a = run(42), b = run(42);
    REQUIRE(a.numel() == b.numel());
    for (int64_t i = 0; i < a.numel(); ++i) CHECK(a.data[i] == b.data[i]);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    SeqRng rng(1);
    ParamStore store;
    Parameter& w = store.create("w", {4}, Init::FanInUniform, rng);
    Tensor before = w.value;
    Adam adam;
    adam.step({&store});
    for (int i = 0; i < 4; ++i) CHECK(w.value.at(i) == before.at(i));
}

TEST_CASE("adam: one step from zero state moves by lr*g/(|g|+eps)") {
    SeqRng rng(1);
    ParamStore store;
    Parameter& w = store.create("w", {3}, Init::Zeros, rng);
    w.grad = Tensor({3}, {0.5, -2.0, 1e-3});
    AdamConfig cfg;
    Adam adam(cfg);
    adam.step({&store});
    for (int i = 0; i < 3; ++i) {
        const double gval = w.grad.at(i);
        const double expected = -cfg.lr * gval / (std::fabs(gval) + cfg.eps);
        CHECK(w.value.at(i) == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("adam: constant gradient drives updates toward lr*sign(g)") {
    SeqRng rng(1);
    ParamStore store;
    Parameter& w = store.create("w", {1}, Init::Zeros, rng);
    Adam adam;
    double prev = w.value.at(0);
    double delta = 0.0;
    for (int s = 0; s < 5000; ++s) {
        w.grad.at(0) = 3.0;
        adam.step({&store});
        delta = w.value.at(0) - prev;
        prev = w.value.at(0);
    }
    CHECK(delta == doctest::Approx(-adam.config().lr).epsilon(1e-3));
}

TEST_CASE("adam: NaN gradient aborts with the parameter name") {
    SeqRng rng(1);
    ParamStore store;
    store.create("fine", {2}, Init::Zeros, rng);
    Parameter& bad = store.create("exploding", {2}, Init::Zeros, rng);
    bad.grad.at(0) = std::nan("");
    Adam adam;
    try {
        adam.step({&store});
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("exploding") != std::string::npos);
    }
}

TEST_CASE("count_parameters: linear 128->128 with bias is 16512 and value-invariant") {
    SeqRng rng(1);
    ParamStore store;
    Layer lin({.kind = LayerKind::Linear, .in = 128, .out = 128}, store, "lin", rng);
    CHECK(store.parameter_count() == 16512);
    CHECK(lin.param_count() == 16512);
    store.get("lin.w").value.at(0, 0) = 99.0;
    CHECK(store.parameter_count() == 16512);
}

TEST_CASE("estimate_flops: linear 128->128 over 10 positions is 327680 FLOPs") {
    SeqRng rng(1);
    ParamStore store;
    Layer lin({.kind = LayerKind::Linear, .in = 128, .out = 128}, store, "lin", rng);
    CHECK(lin.flops(10) == doctest::Approx(327680.0));
}

TEST_CASE("estimate_flops: doubling sequence length more than doubles attention flops") {
    SeqRng rng(1);
    ParamStore store;
    Layer attn({.kind = LayerKind::MultiHeadSelfAttention, .in = 128, .heads = 8}, store, "attn", rng);
    const double f1 = attn.flops(64);
    const double f2 = attn.flops(128);
    CHECK(f2 > 2.0 * f1);
    // monotone nondecreasing
    double prev = 0.0;
    for (int len : {1, 2, 4, 8, 16, 32}) {
        CHECK(attn.flops(len) >= prev);
        prev = attn.flops(len);
    }
}

TEST_CASE("checkpoint: round trip preserves names, dims, payload, and optimizer state") {
    SeqRng rng(9);
    ParamStore store;
    store.create("enc.w", {3, 4}, Init::FanInUniform, rng);
    store.create("enc.b", {3}, Init::Normal002, rng);
    Adam adam;
    store.get("enc.w").grad = random_tensor({3, 4}, rng);
    adam.step({&store});

    const std::string path = "/tmp/dctts_test_ckpt.dckp";
    checkpoint::save(path, checkpoint::collect({{"", &store}}, &adam));

    ParamStore loaded;
    SeqRng rng2(1);
    loaded.create("enc.w", {3, 4}, Init::Zeros, rng2);
    loaded.create("enc.b", {3}, Init::Zeros, rng2);
    Adam adam2;
    checkpoint::restore(checkpoint::load(path), {{"", &loaded}}, &adam2);

    CHECK(adam2.step_count() == 1);
    for (int64_t i = 0; i < store.get("enc.w").numel(); ++i)
        CHECK(loaded.get("enc.w").value.data[i] == store.get("enc.w").value.data[i]);
    for (int64_t i = 0; i < store.get("enc.b").numel(); ++i)
        CHECK(loaded.get("enc.b").value.data[i] == store.get("enc.b").value.data[i]);
    std::remove(path.c_str());
}

TEST_CASE("param store: duplicate and reserved names are rejected") {
    SeqRng rng(1);
    ParamStore store;
    store.create("w", {2}, Init::Zeros, rng);
    CHECK_THROWS_AS(store.create("w", {2}, Init::Zeros, rng), UsageError);
    CHECK_THROWS_AS(store.create("opt/x", {2}, Init::Zeros, rng), UsageError);
}
