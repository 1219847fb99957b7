#include "dctts/diffusion.hpp"

#include <cmath>
#include <fstream>

#include "dctts/common.hpp"

namespace dctts {

namespace {

constexpr uint64_t kCorruptStream = 0x11;
constexpr uint64_t kTerminalStream = 0x22;
constexpr uint64_t kStepStream = 0x33;
constexpr uint64_t kFinalStream = 0x44;

uint64_t stream_key(uint64_t stream, int t) { return (stream << 32) | static_cast<uint64_t>(t); }

void check_prob(double p, const char* what) {
    if (!(p >= -1e-12 && p <= 1.0 + 1e-12))
        throw ConfigError(std::string("schedule: ") + what + " = " + std::to_string(p) + " outside [0,1]");
}

// cumulative kernel over the half-open span (r, t]: alpha multiplies,
// mask mass composes as 1 - prod(1 - gamma)
struct SpanKernel {
    double alpha, beta, gamma;
};

SpanKernel span_kernel(const NoiseSchedule& s, int t, int r) {
    const double ar = s.alpha_bar[static_cast<size_t>(r)];
    const double at = s.alpha_bar[static_cast<size_t>(t)];
    const double gr = s.gamma_bar[static_cast<size_t>(r)];
    const double gt = s.gamma_bar[static_cast<size_t>(t)];
    SpanKernel k;
    k.alpha = ar > 0.0 ? at / ar : 0.0;
    k.gamma = (1.0 - gr) > 0.0 ? (gt - gr) / (1.0 - gr) : 0.0;
    k.beta = (1.0 - k.alpha - k.gamma) / s.K;
    if (k.beta < 0.0 && k.beta > -1e-15) k.beta = 0.0;
    return k;
}

}  // namespace

void NoiseSchedule::validate() const {
    if (T < 1 || K < 2) throw ConfigError("schedule: need T >= 1 and K >= 2");
    const double tol = 1e-12;
    for (int t = 1; t <= T; ++t) {
        check_prob(alpha[static_cast<size_t>(t)], "alpha");
        check_prob(beta[static_cast<size_t>(t)], "beta");
        check_prob(gamma[static_cast<size_t>(t)], "gamma");
        const double sum = alpha[static_cast<size_t>(t)] + K * beta[static_cast<size_t>(t)] +
                           gamma[static_cast<size_t>(t)];
        if (std::fabs(sum - 1.0) > tol)
            throw ConfigError("schedule: alpha + K*beta + gamma != 1 at t=" + std::to_string(t));
    }
    for (int t = 0; t <= T; ++t) {
        check_prob(alpha_bar[static_cast<size_t>(t)], "alpha_bar");
        check_prob(beta_bar[static_cast<size_t>(t)], "beta_bar");
        check_prob(gamma_bar[static_cast<size_t>(t)], "gamma_bar");
        const double sum = alpha_bar[static_cast<size_t>(t)] + K * beta_bar[static_cast<size_t>(t)] +
                           gamma_bar[static_cast<size_t>(t)];
        if (std::fabs(sum - 1.0) > tol)
            throw ConfigError("schedule: cumulative sum != 1 at t=" + std::to_string(t));
        if (t > 0) {
            if (alpha_bar[static_cast<size_t>(t)] > alpha_bar[static_cast<size_t>(t) - 1] + tol)
                throw ConfigError("schedule: alpha_bar must be non-increasing");
            if (gamma_bar[static_cast<size_t>(t)] < gamma_bar[static_cast<size_t>(t) - 1] - tol)
                throw ConfigError("schedule: gamma_bar must be non-decreasing");
        }
    }
}

NoiseSchedule build_linear_schedule(int T, int K, ScheduleMode mode) {
    if (T < 1 || K < 2) throw ConfigError("build_linear_schedule: need T >= 1 and K >= 2");
    NoiseSchedule s;
    s.T = T;
    s.K = K;
    s.alpha.assign(static_cast<size_t>(T) + 1, 0.0);
    s.beta.assign(static_cast<size_t>(T) + 1, 0.0);
    s.gamma.assign(static_cast<size_t>(T) + 1, 0.0);
    s.alpha_bar.assign(static_cast<size_t>(T) + 1, 0.0);
    s.beta_bar.assign(static_cast<size_t>(T) + 1, 0.0);
    s.gamma_bar.assign(static_cast<size_t>(T) + 1, 0.0);
    s.alpha_bar[0] = 1.0;

    if (mode == ScheduleMode::Cumulative) {
        // endpoints are cumulative targets: gamma_bar_T = 0.9, K*beta_bar_T = 0.1
        for (int t = 1; t <= T; ++t) {
            const double r = static_cast<double>(t) / T;
            const double gbar = 0.9 * r;
            const double kbbar = 0.1 * r;
            s.gamma_bar[static_cast<size_t>(t)] = gbar;
            s.beta_bar[static_cast<size_t>(t)] = kbbar / K;
            s.alpha_bar[static_cast<size_t>(t)] = 1.0 - gbar - kbbar;
            const double gprev = s.gamma_bar[static_cast<size_t>(t) - 1];
            const double aprev = s.alpha_bar[static_cast<size_t>(t) - 1];
            s.gamma[static_cast<size_t>(t)] = (gbar - gprev) / (1.0 - gprev);
            s.alpha[static_cast<size_t>(t)] = aprev > 0.0 ? s.alpha_bar[static_cast<size_t>(t)] / aprev : 0.0;
            s.beta[static_cast<size_t>(t)] =
                (1.0 - s.alpha[static_cast<size_t>(t)] - s.gamma[static_cast<size_t>(t)]) / K;
        }
    } else {
        // literal per-step reading: gamma_t and K*beta_t ramp linearly
        for (int t = 1; t <= T; ++t) {
            const double r = static_cast<double>(t) / T;
            s.gamma[static_cast<size_t>(t)] = 0.9 * r;
            s.beta[static_cast<size_t>(t)] = 0.1 * r / K;
            s.alpha[static_cast<size_t>(t)] = 1.0 - 0.9 * r - 0.1 * r;
            const double aprev = s.alpha_bar[static_cast<size_t>(t) - 1];
            const double gprev = s.gamma_bar[static_cast<size_t>(t) - 1];
            s.alpha_bar[static_cast<size_t>(t)] = aprev * s.alpha[static_cast<size_t>(t)];
            s.gamma_bar[static_cast<size_t>(t)] =
                gprev + (1.0 - gprev) * s.gamma[static_cast<size_t>(t)];
            s.beta_bar[static_cast<size_t>(t)] =
                (1.0 - s.alpha_bar[static_cast<size_t>(t)] - s.gamma_bar[static_cast<size_t>(t)]) / K;
        }
    }
    s.validate();
    return s;
}

void write_schedule_csv(const NoiseSchedule& s, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write schedule csv: " + path);
    out << "t,alpha,beta,gamma,alpha_bar,beta_bar,gamma_bar\n";
    out.precision(17);
    for (int t = 1; t <= s.T; ++t)
        out << t << ',' << s.alpha[static_cast<size_t>(t)] << ',' << s.beta[static_cast<size_t>(t)] << ','
            << s.gamma[static_cast<size_t>(t)] << ',' << s.alpha_bar[static_cast<size_t>(t)] << ','
            << s.beta_bar[static_cast<size_t>(t)] << ',' << s.gamma_bar[static_cast<size_t>(t)] << '\n';
}

Tensor transition_matrix(const NoiseSchedule& s, int t) {
    if (t < 1 || t > s.T) throw InputError("transition_matrix: t out of range");
    const int n = s.K + 1;
    const double a = s.alpha[static_cast<size_t>(t)];
    const double b = s.beta[static_cast<size_t>(t)];
    const double gmask = s.gamma[static_cast<size_t>(t)];
    Tensor m({n, n});
    for (int j = 0; j < s.K; ++j) {
        for (int i = 0; i < s.K; ++i) m.at(i, j) = i == j ? a + b : b;
        m.at(s.K, j) = gmask;
    }
    m.at(s.K, s.K) = 1.0;  // MASK is absorbing
    return m;
}

std::vector<double> q_xt_given_x0(const NoiseSchedule& s, int t, int x0) {
    if (x0 < 0 || x0 >= s.K) throw InputError("q_xt_given_x0: x0 must be a non-mask token");
    if (t < 0 || t > s.T) throw InputError("q_xt_given_x0: t out of range");
    std::vector<double> q(static_cast<size_t>(s.K) + 1, s.beta_bar[static_cast<size_t>(t)]);
    q[static_cast<size_t>(x0)] =
        s.alpha_bar[static_cast<size_t>(t)] + s.beta_bar[static_cast<size_t>(t)];
    q[static_cast<size_t>(s.K)] = s.gamma_bar[static_cast<size_t>(t)];
    return q;
}

std::vector<int> forward_corrupt(const NoiseSchedule& s, int t, const std::vector<int>& x0_seq,
                                 uint64_t seed) {
    if (t < 0 || t > s.T) throw InputError("forward_corrupt: t out of range");
    std::vector<int> out(x0_seq.size());
    const double gbar = s.gamma_bar[static_cast<size_t>(t)];
    const double abar = s.alpha_bar[static_cast<size_t>(t)];
    const uint64_t key = stream_key(kCorruptStream, t);
    for (size_t p = 0; p < x0_seq.size(); ++p) {
        const int x0 = x0_seq[p];
        if (x0 < 0 || x0 >= s.K) throw InputError("forward_corrupt: input must be mask-free");
        const double u = rng::uniform(seed, key, p, 0);
        if (u < gbar)
            out[p] = s.K;
        else if (u < gbar + abar)
            out[p] = x0;
        else
            out[p] = static_cast<int>(rng::below(static_cast<uint64_t>(s.K), seed, key, p, 1));
    }
    return out;
}

std::vector<double> reverse_distribution(const NoiseSchedule& s, int t, int r, int x_t,
                                         const std::vector<double>& pi) {
    if (t < 1 || t > s.T || r < 0 || r >= t) throw InputError("reverse_distribution: bad (t, r)");
    if (static_cast<int>(pi.size()) != s.K) throw InputError("reverse_distribution: pi must cover K classes");
    if (x_t < 0 || x_t > s.K) throw InputError("reverse_distribution: x_t out of range");
    const double abar_t = s.alpha_bar[static_cast<size_t>(t)];
    const double bbar_t = s.beta_bar[static_cast<size_t>(t)];
    const double gbar_t = s.gamma_bar[static_cast<size_t>(t)];
    const double abar_r = s.alpha_bar[static_cast<size_t>(r)];
    const double bbar_r = s.beta_bar[static_cast<size_t>(r)];
    const double gbar_r = s.gamma_bar[static_cast<size_t>(r)];
    const SpanKernel span = span_kernel(s, t, r);
    const bool masked = x_t == s.K;

    // d_k = q_t(x_t | x0 = k); S = sum_k pi_k / d_k
    double S = 0.0;
    std::vector<double> inv_d(static_cast<size_t>(s.K), 0.0);
    for (int k = 0; k < s.K; ++k) {
        const double d = masked ? gbar_t : bbar_t + (k == x_t ? abar_t : 0.0);
        if (d > 0.0) {
            inv_d[static_cast<size_t>(k)] = 1.0 / d;
            S += pi[static_cast<size_t>(k)] / d;
        }
    }
    std::vector<double> out(static_cast<size_t>(s.K) + 1, 0.0);
    double z = 0.0;
    for (int v = 0; v < s.K; ++v) {
        const double m = masked ? span.gamma : span.beta + (v == x_t ? span.alpha : 0.0);
        const double mix = bbar_r * S + abar_r * pi[static_cast<size_t>(v)] * inv_d[static_cast<size_t>(v)];
        out[static_cast<size_t>(v)] = m * mix;
        z += out[static_cast<size_t>(v)];
    }
    if (masked) {
        out[static_cast<size_t>(s.K)] = gbar_r * S;
        z += out[static_cast<size_t>(s.K)];
    }
    if (z <= 0.0)
        throw InputError("reverse_distribution: zero normalizer for x_t=" + std::to_string(x_t) +
                         " at t=" + std::to_string(t));
    for (double& v : out) v /= z;
    return out;
}

std::vector<double> true_posterior(const NoiseSchedule& s, int t, int x_t, int x0) {
    if (t < 1 || t > s.T) throw InputError("true_posterior: t out of range");
    if (x0 < 0 || x0 >= s.K) throw InputError("true_posterior: x0 must be a non-mask token");
    if (x_t < 0 || x_t > s.K) throw InputError("true_posterior: x_t out of range");
    // Bayes normalizer is q_t(x_t | x0); zero means the pair is impossible
    const std::vector<double> qt = q_xt_given_x0(s, t, x0);
    if (qt[static_cast<size_t>(x_t)] <= 0.0)
        throw InputError("true_posterior: impossible pair (x_t=" + std::to_string(x_t) +
                         ", x0=" + std::to_string(x0) + ") at t=" + std::to_string(t));
    std::vector<double> pi(static_cast<size_t>(s.K), 0.0);
    pi[static_cast<size_t>(x0)] = 1.0;
    return reverse_distribution(s, t, t - 1, x_t, pi);
}

double categorical_kl(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size()) throw InputError("categorical_kl: support mismatch");
    double kl = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) {
            if (q[i] <= 0.0) throw NumericError("categorical_kl: q vanishes where p has mass");
            kl += p[i] * std::log(p[i] / q[i]);
        }
    }
    return kl;
}

namespace {

// shared core for the VLB loss and its gradient; see reverse_distribution for
// the mixture structure
struct VlbPosition {
    double loss;
    std::vector<double> dloss_dpi;  // length K (empty when grads not requested)
};

VlbPosition vlb_position(const NoiseSchedule& s, int t, int x0, int x_t, const double* pi,
                         bool want_grad) {
    const int K = s.K;
    const int r = t - 1;
    std::vector<double> piv(pi, pi + K);
    const std::vector<double> p = reverse_distribution(s, t, r, x_t, piv);

    // target: exact posterior for t>=2, one-hot at x0 for t=1 (KL collapses
    // to -log p(x0|x1))
    std::vector<double> target;
    if (t >= 2) {
        target = true_posterior(s, t, x_t, x0);
    } else {
        target.assign(static_cast<size_t>(K) + 1, 0.0);
        target[static_cast<size_t>(x0)] = 1.0;
    }

    VlbPosition out;
    // KL is nonnegative; the floor only absorbs roundoff at the exact minimum
    out.loss = std::max(0.0, categorical_kl(target, p));

    if (!want_grad) return out;

    const double abar_t = s.alpha_bar[static_cast<size_t>(t)];
    const double bbar_t = s.beta_bar[static_cast<size_t>(t)];
    const double gbar_t = s.gamma_bar[static_cast<size_t>(t)];
    const double abar_r = s.alpha_bar[static_cast<size_t>(r)];
    const double bbar_r = s.beta_bar[static_cast<size_t>(r)];
    const double gbar_r = s.gamma_bar[static_cast<size_t>(r)];
    const SpanKernel span = span_kernel(s, t, r);
    const bool masked = x_t == s.K;

    // z is the un-normalized mixture mass; p_v = raw_v / z, and
    // dKL/draw_v = -q_v/raw_v + (1/z) since sum_v q_v = 1
    double S = 0.0;
    std::vector<double> inv_d(static_cast<size_t>(K), 0.0);
    for (int k = 0; k < K; ++k) {
        const double d = masked ? gbar_t : bbar_t + (k == x_t ? abar_t : 0.0);
        if (d > 0.0) {
            inv_d[static_cast<size_t>(k)] = 1.0 / d;
            S += pi[k] / d;
        }
    }
    double z = 0.0;
    std::vector<double> raw(static_cast<size_t>(K) + 1, 0.0);
    std::vector<double> mfac(static_cast<size_t>(K) + 1, 0.0);
    for (int v = 0; v < K; ++v) {
        mfac[static_cast<size_t>(v)] = masked ? span.gamma : span.beta + (v == x_t ? span.alpha : 0.0);
        raw[static_cast<size_t>(v)] =
            mfac[static_cast<size_t>(v)] *
            (bbar_r * S + abar_r * pi[v] * inv_d[static_cast<size_t>(v)]);
        z += raw[static_cast<size_t>(v)];
    }
    if (masked) {
        mfac[static_cast<size_t>(K)] = 1.0;
        raw[static_cast<size_t>(K)] = gbar_r * S;
        z += raw[static_cast<size_t>(K)];
    }

    // u_v = dKL/draw_v
    std::vector<double> u(static_cast<size_t>(K) + 1, 0.0);
    for (int v = 0; v <= K; ++v) {
        const double q = target[static_cast<size_t>(v)];
        double g = 1.0 / z;  // from the normalizer
        if (q > 0.0) g -= q / raw[static_cast<size_t>(v)];
        u[static_cast<size_t>(v)] = g;
    }

    // raw_v = mfac_v*(bbar_r*S + abar_r*pi_v/d_v) for v<K, raw_MASK = gbar_r*S
    // dS/dpi_k = 1/d_k
    out.dloss_dpi.assign(static_cast<size_t>(K), 0.0);
    double dS_coeff = 0.0;  // sum over v of u_v * d raw_v / dS
    for (int v = 0; v < K; ++v) dS_coeff += u[static_cast<size_t>(v)] * mfac[static_cast<size_t>(v)] * bbar_r;
    if (masked) dS_coeff += u[static_cast<size_t>(K)] * gbar_r;
    for (int k = 0; k < K; ++k) {
        double g = dS_coeff * inv_d[static_cast<size_t>(k)];
        g += u[static_cast<size_t>(k)] * mfac[static_cast<size_t>(k)] * abar_r * inv_d[static_cast<size_t>(k)];
        out.dloss_dpi[static_cast<size_t>(k)] = g;
    }
    return out;
}

}  // namespace

Graph::Id vlb_loss_op(Graph& g, const NoiseSchedule& s, int t, const std::vector<int>& x0_seq,
                      const std::vector<int>& xt_seq, Graph::Id logits) {
    const Tensor& lt = g.val(logits);
    const int n = static_cast<int>(x0_seq.size());
    if (t < 1 || t > s.T) throw InputError("vlb_loss: t out of range");
    if (lt.rank() != 2 || lt.dim(0) != n || lt.dim(1) != s.K)
        throw ConfigError("vlb_loss: logits must be [N, K], got " + lt.shape_str());
    if (static_cast<int>(xt_seq.size()) != n) throw InputError("vlb_loss: sequence length mismatch");

    // softmax per row, then per-position loss; gradient routed through the
    // softmax Jacobian in the custom backward
    Tensor pi({n, s.K});
    for (int p = 0; p < n; ++p) {
        const double* row = lt.row(p);
        double mx = row[0];
        for (int k = 1; k < s.K; ++k) mx = std::max(mx, row[k]);
        double zz = 0.0;
        for (int k = 0; k < s.K; ++k) {
            pi.at(p, k) = std::exp(row[k] - mx);
            zz += pi.at(p, k);
        }
        for (int k = 0; k < s.K; ++k) pi.at(p, k) /= zz;
    }

    double total = 0.0;
    for (int p = 0; p < n; ++p)
        total += vlb_position(s, t, x0_seq[static_cast<size_t>(p)], xt_seq[static_cast<size_t>(p)],
                              pi.row(p), false)
                     .loss;
    total /= n;

    NoiseSchedule sched = s;
    std::vector<int> x0c = x0_seq, xtc = xt_seq;
    return g.custom(Tensor::scalar(total), {logits},
                    [sched, x0c, xtc, t, pi, logits](Graph& gg, Graph::Id self) {
                        const double gout = gg.grad_of(self).data[0];
                        Graph::Node& ln = gg.node(logits);
                        if (!ln.needs_grad) return;
                        const int n = static_cast<int>(x0c.size());
                        const int K = sched.K;
                        for (int p = 0; p < n; ++p) {
                            const VlbPosition vp =
                                vlb_position(sched, t, x0c[static_cast<size_t>(p)],
                                             xtc[static_cast<size_t>(p)], pi.row(p), true);
                            // chain through softmax: dL/dlogit_j = pi_j (dL/dpi_j - sum_k dL/dpi_k pi_k)
                            double dot = 0.0;
                            for (int k = 0; k < K; ++k) dot += vp.dloss_dpi[static_cast<size_t>(k)] * pi.at(p, k);
                            for (int j = 0; j < K; ++j)
                                ln.grad.at(p, j) += gout / n * pi.at(p, j) *
                                                    (vp.dloss_dpi[static_cast<size_t>(j)] - dot);
                        }
                    });
}

double vlb_loss_value(const NoiseSchedule& s, int t, const std::vector<int>& x0_seq,
                      const std::vector<int>& xt_seq, const Tensor& logits) {
    Graph g;
    return g.val(vlb_loss_op(g, s, t, x0_seq, xt_seq, g.input(logits))).data[0];
}

double prior_kl(const NoiseSchedule& s, const std::vector<int>& x0_seq) {
    // terminal reference: MASK w.p. gamma_bar_T, the rest uniform
    const double gT = s.gamma_bar[static_cast<size_t>(s.T)];
    const double uni = (1.0 - gT) / s.K;
    double total = 0.0;
    for (int x0 : x0_seq) {
        const std::vector<double> q = q_xt_given_x0(s, s.T, x0);
        for (int v = 0; v <= s.K; ++v) {
            const double qv = q[static_cast<size_t>(v)];
            const double pv = v == s.K ? gT : uni;
            if (qv > 0.0 && pv > 0.0) total += qv * std::log(qv / pv);
        }
    }
    return std::max(0.0, total / static_cast<double>(x0_seq.size()));
}

std::vector<int> sample_tokens(const LogitsFn& logits_fn, const NoiseSchedule& s, int steps, int n,
                               uint64_t seed) {
    if (steps < 1 || steps > s.T) throw InputError("sample_tokens: need 1 <= steps <= T");
    // evenly strided retained steps tau_1 < ... < tau_steps = T
    std::vector<int> taus(static_cast<size_t>(steps));
    for (int i = 1; i <= steps; ++i)
        taus[static_cast<size_t>(i) - 1] =
            static_cast<int>(std::llround(static_cast<double>(i) * s.T / steps));

    // terminal draw
    std::vector<int> x(static_cast<size_t>(n));
    const double gT = s.gamma_bar[static_cast<size_t>(s.T)];
    const uint64_t term_key = stream_key(kTerminalStream, s.T);
    for (int p = 0; p < n; ++p) {
        const double u = rng::uniform(seed, term_key, static_cast<uint64_t>(p), 0);
        x[static_cast<size_t>(p)] =
            u < gT ? s.K
                   : static_cast<int>(rng::below(static_cast<uint64_t>(s.K), seed, term_key,
                                                 static_cast<uint64_t>(p), 1));
    }

    auto model_probs = [&](int t) {
        Tensor logits = logits_fn(x, t);
        if (logits.rank() != 2 || logits.dim(0) != n || logits.dim(1) != s.K)
            throw ConfigError("sample_tokens: model logits must be [N, K]");
        if (!logits.all_finite()) throw NumericError("sample_tokens: non-finite model logits");
        Tensor pi({n, s.K});
        for (int p = 0; p < n; ++p) {
            const double* row = logits.row(p);
            double mx = row[0];
            for (int k = 1; k < s.K; ++k) mx = std::max(mx, row[k]);
            double z = 0.0;
            for (int k = 0; k < s.K; ++k) {
                pi.at(p, k) = std::exp(row[k] - mx);
                z += pi.at(p, k);
            }
            for (int k = 0; k < s.K; ++k) pi.at(p, k) /= z;
        }
        return pi;
    };

    for (int i = steps - 1; i >= 1; --i) {
        const int t = taus[static_cast<size_t>(i)];
        const int r = taus[static_cast<size_t>(i) - 1];
        const Tensor pi = model_probs(t);
        const uint64_t key = stream_key(kStepStream, t);
        for (int p = 0; p < n; ++p) {
            std::vector<double> row(pi.row(p), pi.row(p) + s.K);
            const std::vector<double> dist = reverse_distribution(s, t, r, x[static_cast<size_t>(p)], row);
            const double u = rng::uniform(seed, key, static_cast<uint64_t>(p), 0);
            double acc = 0.0;
            int pick = s.K;
            for (int v = 0; v <= s.K; ++v) {
                acc += dist[static_cast<size_t>(v)];
                if (u < acc) {
                    pick = v;
                    break;
                }
            }
            x[static_cast<size_t>(p)] = pick;
        }
    }

    // final step: draw x0 directly from the model head (no MASK class)
    const int t1 = taus[0];
    const Tensor pi = model_probs(t1);
    const uint64_t key = stream_key(kFinalStream, t1);
    for (int p = 0; p < n; ++p) {
        const double u = rng::uniform(seed, key, static_cast<uint64_t>(p), 0);
        double acc = 0.0;
        int pick = s.K - 1;
        for (int k = 0; k < s.K; ++k) {
            acc += pi.at(p, k);
            if (u < acc) {
                pick = k;
                break;
            }
        }
        x[static_cast<size_t>(p)] = pick;
    }
    return x;
}

}  // namespace dctts
