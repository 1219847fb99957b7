#include "dctts/contrastive.hpp"

#include <cmath>

namespace dctts {

double condition_similarity(const Tensor& pooled_a, const Tensor& pooled_b) {
    if (pooled_a.numel() != pooled_b.numel())
        throw InputError("condition_similarity: pooled dims differ");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (int64_t i = 0; i < pooled_a.numel(); ++i) {
        dot += pooled_a.data[i] * pooled_b.data[i];
        na += pooled_a.data[i] * pooled_a.data[i];
        nb += pooled_b.data[i] * pooled_b.data[i];
    }
    if (na <= 0.0 || nb <= 0.0) return 0.0;  // zero-norm convention
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

double similarity_weight(const Tensor& pooled_c, const Tensor& pooled_cj) {
    return 1.0 - condition_similarity(pooled_c, pooled_cj);
}

Graph::Id sequence_score_from_logits(Graph& g, Graph::Id logits, const std::vector<int>& z) {
    const Tensor& lt = g.val(logits);
    if (lt.rank() != 2 || lt.dim(0) != static_cast<int>(z.size()))
        throw ConfigError("sequence_score: logits shape " + lt.shape_str() + " does not match sequence");
    for (int v : z)
        if (v < 0 || v >= lt.dim(1)) throw InputError("sequence_score: sequence must be mask-free");
    Graph::Id logp = g.log_softmax_rows(logits);
    return g.sum_all(g.gather_rows(logp, z));
}

Graph::Id sequence_score(Graph& g, const Denoiser& den, const NoiseSchedule& s, int t,
                         const std::vector<int>& z, Graph::Id cond, uint64_t corrupt_seed) {
    const std::vector<int> x_t = forward_corrupt(s, t, z, corrupt_seed);
    Graph::Id logits = den.logits(g, x_t, t, cond);
    return sequence_score_from_logits(g, logits, z);
}

Graph::Id tcll_from_scores(Graph& g, Graph::Id positive_score,
                           const std::vector<Graph::Id>& negative_scores,
                           const std::vector<double>& weights) {
    if (negative_scores.size() != weights.size())
        throw UsageError("tcll: weights must pair with negative scores");
    for (double w : weights)
        if (!(w >= 0.0 && w <= 2.0)) throw InputError("tcll: weight outside [0, 2]");

    const double s0 = g.val(positive_score).data[0];
    std::vector<double> a;  // log w_j + s_j - s_0, for w_j > 0
    std::vector<size_t> active;
    for (size_t j = 0; j < negative_scores.size(); ++j) {
        if (weights[j] <= 0.0) continue;
        a.push_back(std::log(weights[j]) + g.val(negative_scores[j]).data[0] - s0);
        active.push_back(j);
    }
    double m = 0.0;
    for (double v : a) m = std::max(m, v);
    double zsum = std::exp(-m);
    for (double v : a) zsum += std::exp(v - m);
    const double loss = m + std::log(zsum);

    std::vector<Graph::Id> parents = {positive_score};
    for (Graph::Id id : negative_scores) parents.push_back(id);
    std::vector<Graph::Id> negs = negative_scores;
    return g.custom(Tensor::scalar(loss), parents,
                    [positive_score, negs, a, active, m, zsum](Graph& gg, Graph::Id self) {
                        const double gout = gg.grad_of(self).data[0];
                        double total = 0.0;
                        for (size_t i = 0; i < active.size(); ++i) {
                            const double p = std::exp(a[i] - m) / zsum;
                            Graph::Node& nj = gg.node(negs[active[i]]);
                            if (nj.needs_grad) nj.grad.data[0] += gout * p;
                            total += p;
                        }
                        Graph::Node& n0 = gg.node(positive_score);
                        if (n0.needs_grad) n0.grad.data[0] -= gout * total;
                    });
}

double tcll_value(double positive_score, const std::vector<double>& negative_scores,
                  const std::vector<double>& weights) {
    Graph g;
    Graph::Id s0 = g.input(Tensor::scalar(positive_score));
    std::vector<Graph::Id> negs;
    for (double s : negative_scores) negs.push_back(g.input(Tensor::scalar(s)));
    return g.val(tcll_from_scores(g, s0, negs, weights)).data[0];
}

}  // namespace dctts
