#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pdet/detection.hpp"
#include "pdet/tensor.hpp"

namespace pdet {

// Single-channel toy image with ground-truth objects in normalized
// center-size coordinates.
struct ToyImage {
    int height = 0;
    int width = 0;
    std::vector<double> pixels;       // row-major, height * width
    std::vector<GtObject> objects;
};

// Frozen feature extractor: a shared random linear projection per patch plus
// a fixed per-patch positional offset, and a ranker vector producing
// per-patch relevance logits. Immutable after make(); the whole struct is
// serialized and byte-compared by the freeze tests.
struct FrozenBackbone {
    int image_size = 0;
    int patch_size = 0;
    std::size_t feature_dim = 0;
    Tensor projection;   // (patch_size^2) x D
    Tensor pos_offset;   // T x D
    std::vector<double> ranker;  // D

    static FrozenBackbone make(int image_size, int patch_size,
                               std::size_t feature_dim, std::uint64_t seed);

    int grid() const { return image_size / patch_size; }
    std::size_t num_patches() const {
        return static_cast<std::size_t>(grid()) * grid();
    }

    Tensor patch_features(const ToyImage& image) const;  // T x D
    std::vector<double> ranker_logits(const Tensor& features) const;
};

struct QueryResult {
    std::vector<double> query;  // D
    std::vector<double> alpha;  // T, softmax of ranker logits
};

// alpha = softmax(logits); query = sum_i alpha_i * features_i.
QueryResult weighted_query(const Tensor& features, std::span<const double> logits);

QueryResult query_function(const ToyImage& image, const FrozenBackbone& backbone);

// One trainable decoder layer: self-attention over learnable object queries
// with prompt tokens prepended to keys and values, then class and box heads.
struct DecoderLayer {
    std::size_t feature_dim = 0;
    std::size_t heads = 0;
    std::size_t head_dim = 0;
    std::size_t num_queries = 0;
    std::size_t num_classes = 0;

    Tensor w_q, w_k, w_v, w_o;   // D x D
    Tensor object_queries;       // N_q x D
    Tensor cls_w;                // D x (C+1)
    std::vector<double> cls_b;   // C+1
    Tensor box_w;                // D x 4
    std::vector<double> box_b;   // 4

    static DecoderLayer init(std::size_t feature_dim, std::size_t heads,
                             std::size_t num_queries, std::size_t num_classes,
                             std::uint64_t seed);
};

// Multi-head attention with prefix rows prepended to keys and values.
// q, k, v are N_q x D; prefix_k and prefix_v are L x D with the same L.
// With L = 0 this is plain MHA. attn_cache (heads x N_q x (L + N_q)) is
// filled when given; it is what the backward pass consumes.
Tensor prefix_mha(const Tensor& q, const Tensor& k, const Tensor& v,
                  const Tensor& prefix_k, const Tensor& prefix_v,
                  std::size_t heads, Tensor* attn_cache = nullptr);

struct DecoderCache {
    Tensor prompt;               // L_p x D as retrieved
    Tensor prefix_k, prefix_v;   // (L_p / 2) x D
    Tensor q, k, v;              // N_q x D
    Tensor attn;                 // heads x N_q x (L_p/2 + N_q)
    Tensor headcat;              // N_q x D, concatenated head outputs
    Tensor features;             // N_q x D, decoder output f_i
    Tensor cls_logits;           // N_q x (C+1)
    Tensor box_logits;           // N_q x 4
};

// Decoder forward for one retrieved prompt. The prompt may have zero rows,
// which reduces to the promptless decoder exactly.
std::vector<Detection> decode(const DecoderLayer& layer, const Tensor& prompt,
                              DecoderCache* cache = nullptr);

struct DecoderGrads {
    Tensor w_q, w_k, w_v, w_o, object_queries, cls_w, box_w;
    std::vector<double> cls_b, box_b;

    static DecoderGrads zeros_like(const DecoderLayer& layer);
};

// Backward through heads, output projection, prefix attention and the Q/K/V
// projections. d_cls_logits and d_box_logits are the loss gradients in
// head-logit space; d_prompt receives the gradient w.r.t. the retrieved
// prompt (rows [d_prefix_k; d_prefix_v]).
void decode_backward(const DecoderLayer& layer, const DecoderCache& cache,
                     const Tensor& d_cls_logits, const Tensor& d_box_logits,
                     DecoderGrads& grads, Tensor& d_prompt);

}  // namespace pdet
