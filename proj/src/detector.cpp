#include "pdet/detector.hpp"

#include <cmath>
#include <stdexcept>

#include "pdet/numcore.hpp"
#include "pdet/prompt_pools.hpp"
#include "pdet/rng.hpp"

namespace pdet {

FrozenBackbone FrozenBackbone::make(int image_size, int patch_size,
                                    std::size_t feature_dim, std::uint64_t seed) {
    if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0)
        throw std::invalid_argument("FrozenBackbone: image size must be a multiple of patch size");
    FrozenBackbone b;
    b.image_size = image_size;
    b.patch_size = patch_size;
    b.feature_dim = feature_dim;

    Rng rng(seed);
    const std::size_t pix = static_cast<std::size_t>(patch_size) * patch_size;
    b.projection = Tensor::zeros({pix, feature_dim});
    const double proj_std = 1.0 / std::sqrt(static_cast<double>(pix));
    for (double& v : b.projection.data) v = rng.normal(0.0, proj_std);

    b.pos_offset = Tensor::zeros({b.num_patches(), feature_dim});
    for (double& v : b.pos_offset.data) v = rng.normal(0.0, 0.5);

    // Ranker: the feature-space image of an all-bright patch, normalized.
    // Its logits score patch brightness, so relevance concentrates on
    // rendered objects instead of background. Fixed at construction like
    // every other backbone parameter.
    b.ranker.assign(feature_dim, 0.0);
    for (std::size_t flat = 0; flat < pix; ++flat)
        for (std::size_t d = 0; d < feature_dim; ++d)
            b.ranker[d] += b.projection.at(flat, d);
    double norm = 0.0;
    for (double v : b.ranker) norm += v * v;
    norm = std::sqrt(norm);
    const double sharpness = 2.0;
    for (double& v : b.ranker) v *= sharpness / norm;
    return b;
}

Tensor FrozenBackbone::patch_features(const ToyImage& image) const {
    if (image.height != image_size || image.width != image_size)
        throw std::invalid_argument("patch_features: image dimensions mismatch");
    const int g = grid();
    Tensor out = Tensor::zeros({num_patches(), feature_dim});
    for (int pr = 0; pr < g; ++pr) {
        for (int pc = 0; pc < g; ++pc) {
            const std::size_t p = static_cast<std::size_t>(pr) * g + pc;
            for (int y = 0; y < patch_size; ++y) {
                for (int x = 0; x < patch_size; ++x) {
                    const double pixel =
                        image.pixels[(pr * patch_size + y) * image.width +
                                     (pc * patch_size + x)];
                    const std::size_t flat = static_cast<std::size_t>(y) * patch_size + x;
                    for (std::size_t d = 0; d < feature_dim; ++d)
                        out.at(p, d) += pixel * projection.at(flat, d);
                }
            }
            for (std::size_t d = 0; d < feature_dim; ++d)
                out.at(p, d) += pos_offset.at(p, d);
        }
    }
    return out;
}

std::vector<double> FrozenBackbone::ranker_logits(const Tensor& features) const {
    std::vector<double> logits(features.dim(0));
    for (std::size_t p = 0; p < features.dim(0); ++p)
        logits[p] = dot(features.row(p), ranker);
    return logits;
}

QueryResult weighted_query(const Tensor& features, std::span<const double> logits) {
    if (features.dim(0) != logits.size())
        throw std::invalid_argument("weighted_query: logits/features mismatch");
    QueryResult out;
    out.alpha = softmax(logits);
    out.query.assign(features.dim(1), 0.0);
    for (std::size_t p = 0; p < features.dim(0); ++p)
        for (std::size_t d = 0; d < features.dim(1); ++d)
            out.query[d] += out.alpha[p] * features.at(p, d);
    return out;
}

QueryResult query_function(const ToyImage& image, const FrozenBackbone& backbone) {
    const Tensor feats = backbone.patch_features(image);
    return weighted_query(feats, backbone.ranker_logits(feats));
}

DecoderLayer DecoderLayer::init(std::size_t feature_dim, std::size_t heads,
                                std::size_t num_queries, std::size_t num_classes,
                                std::uint64_t seed) {
    if (heads == 0 || feature_dim % heads != 0)
        throw std::invalid_argument("DecoderLayer: feature_dim must be divisible by heads");
    DecoderLayer l;
    l.feature_dim = feature_dim;
    l.heads = heads;
    l.head_dim = feature_dim / heads;
    l.num_queries = num_queries;
    l.num_classes = num_classes;

    Rng rng(seed);
    // Xavier bounds keep activations and gradients at unit scale through the
    // projection chain; the object queries carry the residual signal.
    auto init_mat = [&](std::size_t r, std::size_t c) {
        const double bound = std::sqrt(6.0 / static_cast<double>(r + c));
        Tensor t = Tensor::zeros({r, c});
        for (double& v : t.data) v = rng.uniform(-bound, bound);
        return t;
    };
    l.w_q = init_mat(feature_dim, feature_dim);
    l.w_k = init_mat(feature_dim, feature_dim);
    l.w_v = init_mat(feature_dim, feature_dim);
    l.w_o = init_mat(feature_dim, feature_dim);
    l.object_queries = Tensor::zeros({num_queries, feature_dim});
    for (double& v : l.object_queries.data) v = rng.uniform(-0.5, 0.5);
    l.cls_w = init_mat(feature_dim, num_classes + 1);
    l.cls_b.assign(num_classes + 1, 0.0);
    l.box_w = init_mat(feature_dim, 4);
    l.box_b.assign(4, 0.0);
    return l;
}

namespace {

// out = a (R x D) times b (D x C)
Tensor matmul(const Tensor& a, const Tensor& b) {
    const std::size_t r = a.dim(0), d = a.dim(1), c = b.dim(1);
    Tensor out = Tensor::zeros({r, c});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t k = 0; k < d; ++k) {
            const double av = a.at(i, k);
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < c; ++j) out.at(i, j) += av * b.at(k, j);
        }
    return out;
}

// out += a^T (R x D) times g (R x C), i.e. the weight gradient of y = x W.
void accum_at_b(const Tensor& a, const Tensor& g, Tensor& out) {
    for (std::size_t i = 0; i < a.dim(0); ++i)
        for (std::size_t k = 0; k < a.dim(1); ++k) {
            const double av = a.at(i, k);
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < g.dim(1); ++j)
                out.at(k, j) += av * g.at(i, j);
        }
}

// out += g (R x C) times b^T (D x C), i.e. the input gradient of y = x W.
void accum_g_bt(const Tensor& g, const Tensor& b, Tensor& out) {
    for (std::size_t i = 0; i < g.dim(0); ++i)
        for (std::size_t j = 0; j < g.dim(1); ++j) {
            const double gv = g.at(i, j);
            if (gv == 0.0) continue;
            for (std::size_t k = 0; k < b.dim(0); ++k)
                out.at(i, k) += gv * b.at(k, j);
        }
}

}  // namespace

Tensor prefix_mha(const Tensor& q, const Tensor& k, const Tensor& v,
                  const Tensor& prefix_k, const Tensor& prefix_v,
                  std::size_t heads, Tensor* attn_cache) {
    const std::size_t nq = q.dim(0);
    const std::size_t dim = q.dim(1);
    if (k.dim(1) != dim || v.dim(1) != dim)
        throw std::invalid_argument("prefix_mha: feature dim mismatch");
    if (prefix_k.dim(0) != prefix_v.dim(0))
        throw std::invalid_argument("prefix_mha: prefix key/value token counts differ");
    if (prefix_k.numel() > 0 && prefix_k.dim(1) != dim)
        throw std::invalid_argument("prefix_mha: prefix feature dim mismatch");
    if (heads == 0 || dim % heads != 0)
        throw std::invalid_argument("prefix_mha: dim must be divisible by heads");

    const std::size_t dk = dim / heads;
    const std::size_t l = prefix_k.dim(0);
    const std::size_t nk = l + k.dim(0);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

    Tensor out = Tensor::zeros({nq, dim});
    if (attn_cache) *attn_cache = Tensor::zeros({heads, nq, nk});

    std::vector<double> logits(nk);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * dk;
        for (std::size_t i = 0; i < nq; ++i) {
            for (std::size_t j = 0; j < nk; ++j) {
                double acc = 0.0;
                for (std::size_t d = 0; d < dk; ++d) {
                    const double kv = j < l ? prefix_k.at(j, off + d)
                                            : k.at(j - l, off + d);
                    acc += q.at(i, off + d) * kv;
                }
                logits[j] = acc * scale;
            }
            const std::vector<double> attn = softmax(logits);
            if (attn_cache)
                for (std::size_t j = 0; j < nk; ++j) attn_cache->at(h, i, j) = attn[j];
            for (std::size_t j = 0; j < nk; ++j) {
                const double a = attn[j];
                for (std::size_t d = 0; d < dk; ++d) {
                    const double vv = j < l ? prefix_v.at(j, off + d)
                                            : v.at(j - l, off + d);
                    out.at(i, off + d) += a * vv;
                }
            }
        }
    }
    return out;
}

std::vector<Detection> decode(const DecoderLayer& layer, const Tensor& prompt,
                              DecoderCache* cache) {
    Tensor p = prompt.rank() == 2 ? prompt : Tensor::zeros({0, layer.feature_dim});
    if (p.numel() > 0 && p.dim(1) != layer.feature_dim)
        throw std::invalid_argument("decode: prompt feature dim mismatch");

    auto [prefix_k, prefix_v] = split_prefix(p);

    const Tensor q = matmul(layer.object_queries, layer.w_q);
    const Tensor k = matmul(layer.object_queries, layer.w_k);
    const Tensor v = matmul(layer.object_queries, layer.w_v);

    Tensor attn;
    const Tensor headcat =
        prefix_mha(q, k, v, prefix_k, prefix_v, layer.heads, cache ? &attn : nullptr);
    // Residual from the object queries; without it every query collapses to
    // the same attention mixture at init and the set prediction never
    // differentiates.
    Tensor features = matmul(headcat, layer.w_o);
    for (std::size_t i = 0; i < features.data.size(); ++i)
        features.data[i] += layer.object_queries.data[i];

    Tensor cls_logits = matmul(features, layer.cls_w);
    for (std::size_t i = 0; i < cls_logits.dim(0); ++i)
        for (std::size_t j = 0; j < cls_logits.dim(1); ++j)
            cls_logits.at(i, j) += layer.cls_b[j];
    Tensor box_logits = matmul(features, layer.box_w);
    for (std::size_t i = 0; i < box_logits.dim(0); ++i)
        for (std::size_t j = 0; j < 4; ++j) box_logits.at(i, j) += layer.box_b[j];

    std::vector<Detection> dets(layer.num_queries);
    for (std::size_t i = 0; i < layer.num_queries; ++i) {
        dets[i].scores = softmax(cls_logits.row(i));
        const auto sig = [&](std::size_t j) {
            return 1.0 / (1.0 + std::exp(-box_logits.at(i, j)));
        };
        dets[i].box = Box{sig(0), sig(1), sig(2), sig(3)};
        dets[i].feature.assign(features.row(i).begin(), features.row(i).end());
    }

    if (cache) {
        cache->prompt = std::move(p);
        cache->prefix_k = std::move(prefix_k);
        cache->prefix_v = std::move(prefix_v);
        cache->q = q;
        cache->k = k;
        cache->v = v;
        cache->attn = std::move(attn);
        cache->headcat = headcat;
        cache->features = features;
        cache->cls_logits = std::move(cls_logits);
        cache->box_logits = std::move(box_logits);
    }
    return dets;
}

DecoderGrads DecoderGrads::zeros_like(const DecoderLayer& layer) {
    DecoderGrads g;
    g.w_q = Tensor::zeros(layer.w_q.shape);
    g.w_k = Tensor::zeros(layer.w_k.shape);
    g.w_v = Tensor::zeros(layer.w_v.shape);
    g.w_o = Tensor::zeros(layer.w_o.shape);
    g.object_queries = Tensor::zeros(layer.object_queries.shape);
    g.cls_w = Tensor::zeros(layer.cls_w.shape);
    g.box_w = Tensor::zeros(layer.box_w.shape);
    g.cls_b.assign(layer.cls_b.size(), 0.0);
    g.box_b.assign(layer.box_b.size(), 0.0);
    return g;
}

void decode_backward(const DecoderLayer& layer, const DecoderCache& cache,
                     const Tensor& d_cls_logits, const Tensor& d_box_logits,
                     DecoderGrads& grads, Tensor& d_prompt) {
    const std::size_t nq = layer.num_queries;
    const std::size_t dim = layer.feature_dim;
    const std::size_t dk = layer.head_dim;
    const std::size_t l = cache.prefix_k.dim(0);
    const std::size_t nk = l + nq;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

    // Heads.
    Tensor d_features = Tensor::zeros({nq, dim});
    accum_at_b(cache.features, d_cls_logits, grads.cls_w);
    for (std::size_t i = 0; i < nq; ++i)
        for (std::size_t j = 0; j < d_cls_logits.dim(1); ++j)
            grads.cls_b[j] += d_cls_logits.at(i, j);
    accum_g_bt(d_cls_logits, layer.cls_w, d_features);

    accum_at_b(cache.features, d_box_logits, grads.box_w);
    for (std::size_t i = 0; i < nq; ++i)
        for (std::size_t j = 0; j < 4; ++j) grads.box_b[j] += d_box_logits.at(i, j);
    accum_g_bt(d_box_logits, layer.box_w, d_features);

    // Output projection; the residual feeds d_features straight back into
    // the object queries.
    Tensor d_headcat = Tensor::zeros({nq, dim});
    accum_at_b(cache.headcat, d_features, grads.w_o);
    accum_g_bt(d_features, layer.w_o, d_headcat);
    for (std::size_t i = 0; i < d_features.data.size(); ++i)
        grads.object_queries.data[i] += d_features.data[i];

    // Attention.
    Tensor d_q = Tensor::zeros({nq, dim});
    Tensor d_k = Tensor::zeros({nq, dim});
    Tensor d_v = Tensor::zeros({nq, dim});
    Tensor d_prefix_k = Tensor::zeros(cache.prefix_k.shape);
    Tensor d_prefix_v = Tensor::zeros(cache.prefix_v.shape);

    std::vector<double> d_attn(nk);
    for (std::size_t h = 0; h < layer.heads; ++h) {
        const std::size_t off = h * dk;
        for (std::size_t i = 0; i < nq; ++i) {
            for (std::size_t j = 0; j < nk; ++j) {
                double acc = 0.0;
                for (std::size_t d = 0; d < dk; ++d) {
                    const double vv = j < l ? cache.prefix_v.at(j, off + d)
                                            : cache.v.at(j - l, off + d);
                    acc += d_headcat.at(i, off + d) * vv;
                }
                d_attn[j] = acc;
            }
            // dV picks up attn-weighted output grads.
            for (std::size_t j = 0; j < nk; ++j) {
                const double a = cache.attn.at(h, i, j);
                if (a == 0.0) continue;
                for (std::size_t d = 0; d < dk; ++d) {
                    const double g = a * d_headcat.at(i, off + d);
                    if (j < l) d_prefix_v.at(j, off + d) += g;
                    else d_v.at(j - l, off + d) += g;
                }
            }
            // Softmax backward: dz_j = a_j (dA_j - sum_j' a_j' dA_j').
            double inner = 0.0;
            for (std::size_t j = 0; j < nk; ++j) inner += cache.attn.at(h, i, j) * d_attn[j];
            for (std::size_t j = 0; j < nk; ++j) {
                const double dz = cache.attn.at(h, i, j) * (d_attn[j] - inner) * scale;
                if (dz == 0.0) continue;
                for (std::size_t d = 0; d < dk; ++d) {
                    const double kv = j < l ? cache.prefix_k.at(j, off + d)
                                            : cache.k.at(j - l, off + d);
                    d_q.at(i, off + d) += dz * kv;
                    const double g = dz * cache.q.at(i, off + d);
                    if (j < l) d_prefix_k.at(j, off + d) += g;
                    else d_k.at(j - l, off + d) += g;
                }
            }
        }
    }

    // Q/K/V projections back to the object queries.
    accum_at_b(layer.object_queries, d_q, grads.w_q);
    accum_at_b(layer.object_queries, d_k, grads.w_k);
    accum_at_b(layer.object_queries, d_v, grads.w_v);
    accum_g_bt(d_q, layer.w_q, grads.object_queries);
    accum_g_bt(d_k, layer.w_k, grads.object_queries);
    accum_g_bt(d_v, layer.w_v, grads.object_queries);

    // Prompt gradient: rows [d_prefix_k; d_prefix_v].
    d_prompt = Tensor::zeros({2 * l, dim});
    std::copy(d_prefix_k.data.begin(), d_prefix_k.data.end(), d_prompt.data.begin());
    std::copy(d_prefix_v.data.begin(), d_prefix_v.data.end(),
              d_prompt.data.begin() + l * dim);
}

}  // namespace pdet
