#pragma once

#include <optional>
#include <vector>

#include "pdet/detector.hpp"
#include "pdet/matching.hpp"
#include "pdet/numcore.hpp"
#include "pdet/prompt_pools.hpp"

namespace pdet {

// The full trainable system: frozen backbone, one trainable decoder layer,
// and the two prompt pools. Plain value type; a teacher snapshot is a copy.
struct Model {
    FrozenBackbone backbone;
    DecoderLayer decoder;
    SharedPool shared;
    PrivatePool priv;
};

struct LossParams {
    DetectionLossParams det;
    MatchCostParams match;
    double lambda_q = 0.1;
    double lambda_ddl = 0.15;
    double theta_ddl = 1.5707963267948966;  // 90 degrees
    bool use_ddl = true;
};

struct ForwardPass {
    Tensor patch_features;        // T x D
    QueryResult query;
    RetrievalResult retrieval;
    DecoderCache cache;
    std::vector<Detection> detections;
};

ForwardPass model_forward(const Model& model, const ToyImage& image);

struct ModelGrads {
    DecoderGrads decoder;
    PoolGrads pools;

    static ModelGrads zeros_like(const Model& model);
};

struct LossBreakdown {
    double detection = 0.0;
    double ranker = 0.0;
    double ddl = 0.0;
    double total = 0.0;
};

// Ranker target: one-hot over the patch most cosine-similar to the mean
// decoder embedding of Hungarian-matched predictions. No matches (or a
// degenerate mean) -> nullopt and the ranker term is dropped.
std::optional<std::vector<double>> ranker_target(const ForwardPass& fp,
                                                 const Assignment& assignment);

// Composite objective on one image: detection + ranker + directional
// decoupling. When grads is non-null the full hand-derived backward runs;
// gradients are produced for every pool entry, frozen slabs included.
LossBreakdown model_loss(const Model& model, const ToyImage& image,
                         const std::vector<GtObject>& targets,
                         const LossParams& params, ModelGrads* grads,
                         ForwardPass* fp_out = nullptr);

// Plain gradient descent. Frozen private slabs are skipped; everything else
// (decoder, object queries, heads, shared pool, current slab) moves.
void apply_sgd(Model& model, const ModelGrads& grads, double lr);

// Adam over the flattened parameter vector. Frozen private slabs are masked
// out. Re-initialized per stage, since the private pool grows between tasks.
struct AdamOptimizer {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void init(const Model& model);
    void step(Model& model, const ModelGrads& grads);

    std::vector<double> m, v;
    std::vector<char> trainable;
    long t = 0;
};

// Per-parameter trainability in flatten_params order (frozen slabs are 0).
std::vector<char> flatten_trainable_mask(const Model& model);

// Flattening of all differentiable parameters (decoder + shared + every
// private slab) in a fixed order, for the finite-difference composite check.
std::vector<double> flatten_params(const Model& model);
void unflatten_params(Model& model, std::span<const double> values);
std::vector<double> flatten_grads(const Model& model, const ModelGrads& grads);

}  // namespace pdet
