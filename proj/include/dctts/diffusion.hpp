#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dctts/graph.hpp"

namespace dctts {

// Mask-and-replace chain over K token categories plus an absorbing MASK state
// (index K). At step t each surviving token is masked w.p. gamma[t], resampled
// uniformly over the K categories w.p. K*beta[t], kept w.p. alpha[t].
struct NoiseSchedule {
    int T = 0;
    int K = 0;
    // per-step values, index 1..T (slot 0 unused)
    std::vector<double> alpha, beta, gamma;
    // cumulative values, index 0..T with bar[0] = (1, 0, 0)
    std::vector<double> alpha_bar, beta_bar, gamma_bar;

    int mask_index() const { return K; }
    void validate() const;  // throws ConfigError on violated invariants
};

enum class ScheduleMode {
    Cumulative,  // endpoints read as cumulative targets (default)
    PerStep,     // literal per-step reading, for comparison
};

// Linear ramp to the 0.9 / 0.1 mask and uniform endpoints.
NoiseSchedule build_linear_schedule(int T, int K, ScheduleMode mode = ScheduleMode::Cumulative);

void write_schedule_csv(const NoiseSchedule& s, const std::string& path);

// single-step kernel as an explicit column-stochastic (K+1)^2 matrix,
// M[i][j] = P(x_t = i | x_{t-1} = j)
Tensor transition_matrix(const NoiseSchedule& s, int t);

// closed-form q(x_t | x_0), length K+1; t = 0 gives the one-hot at x0
std::vector<double> q_xt_given_x0(const NoiseSchedule& s, int t, int x0);

// corrupt a mask-free sequence to step t; pure in (seed, t, position)
std::vector<int> forward_corrupt(const NoiseSchedule& s, int t, const std::vector<int>& x0_seq,
                                 uint64_t seed);

// exact Bayes posterior q(x_{t-1} = v | x_t, x_0), length K+1
std::vector<double> true_posterior(const NoiseSchedule& s, int t, int x_t, int x0);

// p(x_r = v | x_t) for r < t under model probs pi over the K classes:
// the x0-parameterized mixture sum_k pi_k q(x_r | x_t, x0=k), using exact
// cumulative kernels for the skipped span
std::vector<double> reverse_distribution(const NoiseSchedule& s, int t, int r, int x_t,
                                         const std::vector<double>& pi);

// KL(p || q) over matched categorical supports, 0*log0 = 0
double categorical_kl(const std::vector<double>& p, const std::vector<double>& q);

// graph op: mean over positions of KL(true posterior || model reverse) for
// t >= 2, and -log p(x_0 | x_1) at t = 1. logits: [N, K].
Graph::Id vlb_loss_op(Graph& g, const NoiseSchedule& s, int t, const std::vector<int>& x0_seq,
                      const std::vector<int>& xt_seq, Graph::Id logits);

// plain evaluation of the same quantity (no gradients)
double vlb_loss_value(const NoiseSchedule& s, int t, const std::vector<int>& x0_seq,
                      const std::vector<int>& xt_seq, const Tensor& logits);

// constant prior term KL(q(x_T|x0) || terminal), monitoring only
double prior_kl(const NoiseSchedule& s, const std::vector<int>& x0_seq);

// ancestral sampler over an evenly strided timestep subsequence; the final
// retained step draws x0 directly from the model head, so MASK never appears
// in the output. logits_fn(x_t, t) -> [N, K].
using LogitsFn = std::function<Tensor(const std::vector<int>&, int)>;
std::vector<int> sample_tokens(const LogitsFn& logits_fn, const NoiseSchedule& s, int steps, int n,
                               uint64_t seed);

}  // namespace dctts
