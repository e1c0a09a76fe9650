#include "pdet/oracles.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace pdet {

namespace {

void enumerate(const Tensor& cost, std::size_t row, std::vector<int>& chosen,
               std::vector<bool>& used, double partial, BruteForceResult& best) {
    const std::size_t m = cost.dim(0);
    const std::size_t n = cost.dim(1);
    if (row == m) {
        if (partial < best.total_cost) {
            best.total_cost = partial;
            best.pred_for_gt = chosen;
        }
        return;
    }
    for (std::size_t j = 0; j < n; ++j) {
        if (used[j]) continue;
        used[j] = true;
        chosen[row] = static_cast<int>(j);
        enumerate(cost, row + 1, chosen, used, partial + cost.at(row, j), best);
        used[j] = false;
    }
}

}  // namespace

BruteForceResult brute_force_assignment(const Tensor& cost) {
    if (cost.rank() != 2)
        throw std::invalid_argument("brute_force_assignment: cost must be 2-d");
    const std::size_t m = cost.dim(0);
    if (m > cost.dim(1))
        throw std::invalid_argument("brute_force_assignment: more rows than columns");
    BruteForceResult best;
    best.total_cost = std::numeric_limits<double>::infinity();
    if (m == 0) {
        best.total_cost = 0.0;
        return best;
    }
    std::vector<int> chosen(m, -1);
    std::vector<bool> used(cost.dim(1), false);
    enumerate(cost, 0, chosen, used, 0.0, best);
    // Recompute in row order so the sum matches the production convention
    // bit for bit when the assignments agree.
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) total += cost.at(i, best.pred_for_gt[i]);
    best.total_cost = total;
    return best;
}

Tensor naive_mha(const Tensor& q, const Tensor& k, const Tensor& v,
                 std::size_t heads) {
    const std::size_t nq = q.dim(0);
    const std::size_t nk = k.dim(0);
    const std::size_t dim = q.dim(1);
    const std::size_t dk = dim / heads;
    Tensor out = Tensor::zeros({nq, dim});
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < nq; ++i) {
            std::vector<double> logits(nk, 0.0);
            for (std::size_t j = 0; j < nk; ++j) {
                double acc = 0.0;
                for (std::size_t d = 0; d < dk; ++d)
                    acc += q.at(i, h * dk + d) * k.at(j, h * dk + d);
                logits[j] = acc / std::sqrt(static_cast<double>(dk));
            }
            double mx = logits[0];
            for (double z : logits) mx = std::max(mx, z);
            double denom = 0.0;
            std::vector<double> weights(nk);
            for (std::size_t j = 0; j < nk; ++j) {
                weights[j] = std::exp(logits[j] - mx);
                denom += weights[j];
            }
            for (std::size_t j = 0; j < nk; ++j) {
                const double a = weights[j] / denom;
                for (std::size_t d = 0; d < dk; ++d)
                    out.at(i, h * dk + d) += a * v.at(j, h * dk + d);
            }
        }
    }
    return out;
}

}  // namespace pdet
