#pragma once

#include <vector>

#include "pdet/detection.hpp"
#include "pdet/tensor.hpp"

namespace pdet {

// Optimal one-to-one matching of ground truths to predictions.
// pred_for_gt[i] is the prediction index assigned to ground truth i; the
// mapping is injective. total_cost is the sum of the matched cost entries,
// accumulated in ground-truth order.
struct Assignment {
    std::vector<int> pred_for_gt;
    double total_cost = 0.0;
};

// Exact minimum-cost assignment for an MxN cost matrix, M <= N.
// Among equal-cost optima the lexicographically smallest assignment wins
// (lowest prediction index per ground truth, scanning in order), which makes
// runs deterministic. Exhaustive subset DP, exact for any finite costs;
// N is capped at 20 columns.
Assignment hungarian(const Tensor& cost);

struct MatchCostParams {
    double lambda_l1 = 5.0;
    double lambda_giou = 2.0;
};

// cost(i, j) = -score_j[c_i] + lambda_l1 * L1(b_i, bhat_j)
//            + lambda_giou * (1 - GIoU(b_i, bhat_j))
Tensor match_cost(const std::vector<GtObject>& gt,
                  const std::vector<Detection>& preds,
                  const MatchCostParams& params = {});

struct DetectionLossParams {
    double lambda_l1 = 5.0;
    double lambda_giou = 2.0;
    double no_object_weight = 0.1;
};

// Scalar loss plus gradients in head-logit space: d_cls_logits is the
// gradient w.r.t. the pre-softmax class logits, d_box_logits w.r.t. the
// pre-sigmoid box outputs. Both are recovered from the softmax/sigmoid
// outputs alone, so callers never have to expose their pre-activations.
struct DetectionLossResult {
    double value = 0.0;
    Tensor d_cls_logits;  // N x (C+1)
    Tensor d_box_logits;  // N x 4
};

// Matched predictions pay cross-entropy on the ground-truth class plus the
// L1+GIoU box terms; unmatched ones pay down-weighted cross-entropy toward
// the no-object class.
DetectionLossResult detection_loss(const std::vector<GtObject>& gt,
                                   const std::vector<Detection>& preds,
                                   const Assignment& assignment,
                                   const DetectionLossParams& params = {});

struct RankerLossResult {
    double value = 0.0;
    std::vector<double> d_alpha;
};

// lambda_q * CE(alpha, target): target must be a distribution; alpha must be
// strictly positive wherever the target has mass.
RankerLossResult ranker_loss(std::span<const double> alpha,
                             std::span<const double> target, double lambda_q);

// The combined objective is a plain sum; gradient routing (who is trainable)
// is the model's job, not the loss's.
inline double total_loss(double detection, double ranker, double ddl) {
    return detection + ranker + ddl;
}

}  // namespace pdet
