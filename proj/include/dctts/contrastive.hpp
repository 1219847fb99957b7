#pragma once

#include "dctts/denoiser.hpp"

namespace dctts {

// cosine similarity of mean-pooled condition vectors; zero-norm inputs are
// treated as orthogonal (similarity 0)
double condition_similarity(const Tensor& pooled_a, const Tensor& pooled_b);

// similarity weight 1 - sim(c, c_j), in [0, 2]
double similarity_weight(const Tensor& pooled_c, const Tensor& pooled_cj);

// model's step-t log-likelihood of z read as the clean sequence under
// condition `cond`: corrupt z to step t (keyed by corrupt_seed), run the
// denoiser, sum log softmax at z's indices over all positions
Graph::Id sequence_score(Graph& g, const Denoiser& den, const NoiseSchedule& s, int t,
                         const std::vector<int>& z, Graph::Id cond, uint64_t corrupt_seed);

// same score evaluated on precomputed logits (lets the caller share one
// denoiser forward between the loss terms)
Graph::Id sequence_score_from_logits(Graph& g, Graph::Id logits, const std::vector<int>& z);

// L = log(1 + sum_j w_j exp(s_j - s_0)), evaluated stably; weights w_j >= 0
Graph::Id tcll_from_scores(Graph& g, Graph::Id positive_score,
                           const std::vector<Graph::Id>& negative_scores,
                           const std::vector<double>& weights);

double tcll_value(double positive_score, const std::vector<double>& negative_scores,
                  const std::vector<double>& weights);

}  // namespace dctts
