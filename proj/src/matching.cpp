#include "pdet/matching.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace pdet {

Assignment hungarian(const Tensor& cost) {
    if (cost.rank() != 2) throw std::invalid_argument("hungarian: cost must be 2-d");
    const std::size_t m = cost.dim(0);
    const std::size_t n = cost.dim(1);
    if (m > n) throw std::invalid_argument("hungarian: more ground truths than predictions");
    if (n > 20) throw std::invalid_argument("hungarian: too many columns (cap 20)");
    if (!cost.all_finite()) throw std::invalid_argument("hungarian: non-finite cost");

    Assignment out;
    if (m == 0) return out;

    const double inf = std::numeric_limits<double>::infinity();
    const std::size_t n_masks = std::size_t{1} << n;

    // best[S] = min cost of assigning rows i..m-1 given columns in S are taken.
    // Filled bottom-up; only masks with popcount == i are live per row.
    std::vector<double> next(n_masks, 0.0);
    std::vector<double> best(n_masks, inf);
    std::vector<std::vector<double>> per_row(m);
    for (std::size_t i = m; i-- > 0;) {
        std::fill(best.begin(), best.end(), inf);
        for (std::size_t mask = 0; mask < n_masks; ++mask) {
            if (static_cast<std::size_t>(std::popcount(mask)) != i) continue;
            double b = inf;
            for (std::size_t j = 0; j < n; ++j) {
                if (mask & (std::size_t{1} << j)) continue;
                const double c = cost.at(i, j) + next[mask | (std::size_t{1} << j)];
                if (c < b) b = c;
            }
            best[mask] = b;
        }
        per_row[i] = best;
        std::swap(best, next);
    }

    // Reconstruct, taking the smallest feasible column per row. The equality
    // is exact: per_row[i][mask] was computed as the min over these sums.
    out.pred_for_gt.resize(m);
    std::size_t mask = 0;
    for (std::size_t i = 0; i < m; ++i) {
        int chosen = -1;
        for (std::size_t j = 0; j < n; ++j) {
            if (mask & (std::size_t{1} << j)) continue;
            const std::size_t sub = mask | (std::size_t{1} << j);
            const double rest = (i + 1 < m) ? per_row[i + 1][sub] : 0.0;
            if (cost.at(i, j) + rest == per_row[i][mask]) {
                chosen = static_cast<int>(j);
                break;
            }
        }
        if (chosen < 0) throw std::logic_error("hungarian: reconstruction failed");
        out.pred_for_gt[i] = chosen;
        mask |= std::size_t{1} << chosen;
    }
    for (std::size_t i = 0; i < m; ++i) out.total_cost += cost.at(i, out.pred_for_gt[i]);
    return out;
}

Tensor match_cost(const std::vector<GtObject>& gt,
                  const std::vector<Detection>& preds,
                  const MatchCostParams& params) {
    if (preds.empty()) throw std::invalid_argument("match_cost: no predictions");
    Tensor cost = Tensor::zeros({gt.size(), preds.size()});
    for (std::size_t i = 0; i < gt.size(); ++i) {
        for (std::size_t j = 0; j < preds.size(); ++j) {
            const Detection& d = preds[j];
            if (gt[i].cls < 0 || gt[i].cls + 1 >= static_cast<int>(d.scores.size()))
                throw std::invalid_argument("match_cost: class id out of range");
            cost.at(i, j) = -d.scores[gt[i].cls] +
                            params.lambda_l1 * l1_distance(gt[i].box, d.box) +
                            params.lambda_giou * (1.0 - giou(gt[i].box, d.box));
        }
    }
    return cost;
}

DetectionLossResult detection_loss(const std::vector<GtObject>& gt,
                                   const std::vector<Detection>& preds,
                                   const Assignment& assignment,
                                   const DetectionLossParams& params) {
    if (assignment.pred_for_gt.size() != gt.size())
        throw std::invalid_argument("detection_loss: assignment/gt size mismatch");
    const std::size_t n = preds.size();
    const std::size_t n_scores = n ? preds[0].scores.size() : 0;
    const int no_object = static_cast<int>(n_scores) - 1;

    DetectionLossResult out;
    out.d_cls_logits = Tensor::zeros({n, n_scores});
    out.d_box_logits = Tensor::zeros({n, 4});

    std::vector<int> gt_for_pred(n, -1);
    for (std::size_t i = 0; i < gt.size(); ++i) {
        const int j = assignment.pred_for_gt[i];
        if (j < 0 || j >= static_cast<int>(n))
            throw std::invalid_argument("detection_loss: assignment out of range");
        if (gt_for_pred[j] != -1)
            throw std::invalid_argument("detection_loss: assignment not injective");
        gt_for_pred[j] = static_cast<int>(i);
    }

    for (std::size_t j = 0; j < n; ++j) {
        const Detection& d = preds[j];
        const int gi = gt_for_pred[j];
        const int target = gi >= 0 ? gt[gi].cls : no_object;
        const double weight = gi >= 0 ? 1.0 : params.no_object_weight;

        out.value -= weight * std::log(std::max(d.scores[target], 1e-300));
        for (std::size_t c = 0; c < n_scores; ++c) {
            const double onehot = static_cast<int>(c) == target ? 1.0 : 0.0;
            out.d_cls_logits.at(j, c) = weight * (d.scores[c] - onehot);
        }

        if (gi < 0) continue;
        const Box& b = gt[gi].box;
        out.value += params.lambda_l1 * l1_distance(b, d.box);
        const GiouGrad gg = giou_with_grad(b, d.box);
        out.value += params.lambda_giou * (1.0 - gg.value);

        const double pred_vals[4] = {d.box.cx, d.box.cy, d.box.w, d.box.h};
        const double gt_vals[4] = {b.cx, b.cy, b.w, b.h};
        for (int k = 0; k < 4; ++k) {
            double dv = 0.0;
            if (pred_vals[k] > gt_vals[k]) dv += params.lambda_l1;
            else if (pred_vals[k] < gt_vals[k]) dv -= params.lambda_l1;
            dv -= params.lambda_giou * gg.d_pred[k];
            // Box outputs are sigmoid-bounded; chain through sigma' = b(1-b).
            out.d_box_logits.at(j, k) = dv * pred_vals[k] * (1.0 - pred_vals[k]);
        }
    }
    return out;
}

RankerLossResult ranker_loss(std::span<const double> alpha,
                             std::span<const double> target, double lambda_q) {
    if (alpha.size() != target.size())
        throw std::invalid_argument("ranker_loss: length mismatch");
    double sum = 0.0;
    for (double t : target) {
        if (t < 0.0 || !std::isfinite(t))
            throw std::invalid_argument("ranker_loss: target is not a distribution");
        sum += t;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("ranker_loss: target is not a distribution");

    RankerLossResult out;
    out.d_alpha.assign(alpha.size(), 0.0);
    for (std::size_t k = 0; k < alpha.size(); ++k) {
        if (target[k] == 0.0) continue;
        if (alpha[k] <= 0.0)
            throw std::invalid_argument("ranker_loss: alpha must be positive where target has mass");
        out.value -= lambda_q * target[k] * std::log(alpha[k]);
        out.d_alpha[k] = -lambda_q * target[k] / alpha[k];
    }
    return out;
}

}  // namespace pdet
