#include "pdet/model.hpp"

#include <cmath>
#include <stdexcept>

namespace pdet {

ForwardPass model_forward(const Model& model, const ToyImage& image) {
    ForwardPass fp;
    fp.patch_features = model.backbone.patch_features(image);
    fp.query = weighted_query(fp.patch_features,
                              model.backbone.ranker_logits(fp.patch_features));
    fp.retrieval = retrieve(fp.query.query, model.shared, model.priv);
    fp.detections = decode(model.decoder, fp.retrieval.prompt, &fp.cache);
    return fp;
}

ModelGrads ModelGrads::zeros_like(const Model& model) {
    ModelGrads g;
    g.decoder = DecoderGrads::zeros_like(model.decoder);
    g.pools = PoolGrads::zeros_like(model.shared, model.priv);
    return g;
}

std::optional<std::vector<double>> ranker_target(const ForwardPass& fp,
                                                 const Assignment& assignment) {
    if (assignment.pred_for_gt.empty()) return std::nullopt;
    const std::size_t dim = fp.cache.features.dim(1);
    std::vector<double> mean(dim, 0.0);
    for (int j : assignment.pred_for_gt)
        for (std::size_t d = 0; d < dim; ++d)
            mean[d] += fp.cache.features.at(j, d);
    for (double& v : mean) v /= static_cast<double>(assignment.pred_for_gt.size());

    const std::size_t patches = fp.patch_features.dim(0);
    int best = -1;
    double best_sim = 0.0;
    for (std::size_t p = 0; p < patches; ++p) {
        const auto sim = cosine_similarity(fp.patch_features.row(p), mean);
        if (!sim) continue;
        if (best < 0 || *sim > best_sim) {
            best = static_cast<int>(p);
            best_sim = *sim;
        }
    }
    if (best < 0) return std::nullopt;
    std::vector<double> target(patches, 0.0);
    target[best] = 1.0;
    return target;
}

LossBreakdown model_loss(const Model& model, const ToyImage& image,
                         const std::vector<GtObject>& targets,
                         const LossParams& params, ModelGrads* grads,
                         ForwardPass* fp_out) {
    ForwardPass fp = model_forward(model, image);

    Assignment assignment;
    if (!targets.empty())
        assignment = hungarian(match_cost(targets, fp.detections, params.match));

    const DetectionLossResult det =
        detection_loss(targets, fp.detections, assignment, params.det);

    LossBreakdown loss;
    loss.detection = det.value;

    if (const auto target = ranker_target(fp, assignment); target)
        loss.ranker = ranker_loss(fp.query.alpha, *target, params.lambda_q).value;

    const bool ddl_active = params.use_ddl && !model.shared.entries.empty() &&
                            model.priv.total_entries() > 0;
    DdlResult ddl;
    if (ddl_active) {
        ddl = ddl_loss(model.shared, model.priv, params.theta_ddl, params.lambda_ddl);
        loss.ddl = ddl.value;
    }
    loss.total = total_loss(loss.detection, loss.ranker, loss.ddl);

    if (grads) {
        Tensor d_prompt;
        decode_backward(model.decoder, fp.cache, det.d_cls_logits,
                        det.d_box_logits, grads->decoder, d_prompt);
        retrieve_backward(fp.query.query, model.shared, model.priv, d_prompt,
                          grads->pools);
        // The ranker term has no trainable path: alpha comes from the frozen
        // backbone and the target is piecewise constant in the parameters.
        if (ddl_active) {
            for (std::size_t i = 0; i < ddl.d_shared.size(); ++i)
                for (std::size_t x = 0; x < ddl.d_shared[i].data.size(); ++x)
                    grads->pools.shared[i].d_prompt.data[x] += ddl.d_shared[i].data[x];
            for (std::size_t s = 0; s < ddl.d_private.size(); ++s)
                for (std::size_t j = 0; j < ddl.d_private[s].size(); ++j)
                    for (std::size_t x = 0; x < ddl.d_private[s][j].data.size(); ++x)
                        grads->pools.private_slabs[s][j].d_prompt.data[x] +=
                            ddl.d_private[s][j].data[x];
        }
    }

    if (fp_out) *fp_out = std::move(fp);
    return loss;
}

namespace {

void sgd_tensor(Tensor& param, const Tensor& grad, double lr) {
    for (std::size_t i = 0; i < param.data.size(); ++i)
        param.data[i] -= lr * grad.data[i];
}

void sgd_vec(std::vector<double>& param, const std::vector<double>& grad, double lr) {
    for (std::size_t i = 0; i < param.size(); ++i) param[i] -= lr * grad[i];
}

}  // namespace

void apply_sgd(Model& model, const ModelGrads& grads, double lr) {
    sgd_tensor(model.decoder.w_q, grads.decoder.w_q, lr);
    sgd_tensor(model.decoder.w_k, grads.decoder.w_k, lr);
    sgd_tensor(model.decoder.w_v, grads.decoder.w_v, lr);
    sgd_tensor(model.decoder.w_o, grads.decoder.w_o, lr);
    sgd_tensor(model.decoder.object_queries, grads.decoder.object_queries, lr);
    sgd_tensor(model.decoder.cls_w, grads.decoder.cls_w, lr);
    sgd_vec(model.decoder.cls_b, grads.decoder.cls_b, lr);
    sgd_tensor(model.decoder.box_w, grads.decoder.box_w, lr);
    sgd_vec(model.decoder.box_b, grads.decoder.box_b, lr);

    for (std::size_t i = 0; i < model.shared.entries.size(); ++i) {
        sgd_tensor(model.shared.entries[i].prompt, grads.pools.shared[i].d_prompt, lr);
        sgd_vec(model.shared.entries[i].key, grads.pools.shared[i].d_key, lr);
        sgd_vec(model.shared.entries[i].adapter, grads.pools.shared[i].d_adapter, lr);
    }
    for (std::size_t s = 0; s < model.priv.slabs.size(); ++s) {
        if (!model.priv.slabs[s].trainable) continue;  // freeze contract
        for (std::size_t j = 0; j < model.priv.slabs[s].entries.size(); ++j) {
            PoolEntry& e = model.priv.slabs[s].entries[j];
            const PoolEntryGrad& g = grads.pools.private_slabs[s][j];
            sgd_tensor(e.prompt, g.d_prompt, lr);
            sgd_vec(e.key, g.d_key, lr);
            sgd_vec(e.adapter, g.d_adapter, lr);
        }
    }
}

namespace {

template <typename Fn>
void for_each_param_tensor(const Model& model, Fn&& fn) {
    fn(model.decoder.w_q);
    fn(model.decoder.w_k);
    fn(model.decoder.w_v);
    fn(model.decoder.w_o);
    fn(model.decoder.object_queries);
    fn(model.decoder.cls_w);
    fn(model.decoder.box_w);
}

template <typename Fn>
void for_each_param_tensor(Model& model, Fn&& fn) {
    fn(model.decoder.w_q);
    fn(model.decoder.w_k);
    fn(model.decoder.w_v);
    fn(model.decoder.w_o);
    fn(model.decoder.object_queries);
    fn(model.decoder.cls_w);
    fn(model.decoder.box_w);
}

}  // namespace

std::vector<double> flatten_params(const Model& model) {
    std::vector<double> out;
    for_each_param_tensor(model, [&](const Tensor& t) {
        out.insert(out.end(), t.data.begin(), t.data.end());
    });
    out.insert(out.end(), model.decoder.cls_b.begin(), model.decoder.cls_b.end());
    out.insert(out.end(), model.decoder.box_b.begin(), model.decoder.box_b.end());
    auto push_entry = [&](const PoolEntry& e) {
        out.insert(out.end(), e.prompt.data.begin(), e.prompt.data.end());
        out.insert(out.end(), e.key.begin(), e.key.end());
        out.insert(out.end(), e.adapter.begin(), e.adapter.end());
    };
    for (const auto& e : model.shared.entries) push_entry(e);
    for (const auto& s : model.priv.slabs)
        for (const auto& e : s.entries) push_entry(e);
    return out;
}

void unflatten_params(Model& model, std::span<const double> values) {
    std::size_t pos = 0;
    auto take = [&](double* dst, std::size_t n) {
        if (pos + n > values.size())
            throw std::invalid_argument("unflatten_params: too few values");
        std::copy_n(values.begin() + pos, n, dst);
        pos += n;
    };
    for_each_param_tensor(model, [&](Tensor& t) { take(t.data.data(), t.data.size()); });
    take(model.decoder.cls_b.data(), model.decoder.cls_b.size());
    take(model.decoder.box_b.data(), model.decoder.box_b.size());
    auto take_entry = [&](PoolEntry& e) {
        take(e.prompt.data.data(), e.prompt.data.size());
        take(e.key.data(), e.key.size());
        take(e.adapter.data(), e.adapter.size());
    };
    for (auto& e : model.shared.entries) take_entry(e);
    for (auto& s : model.priv.slabs)
        for (auto& e : s.entries) take_entry(e);
    if (pos != values.size())
        throw std::invalid_argument("unflatten_params: too many values");
}

std::vector<char> flatten_trainable_mask(const Model& model) {
    std::vector<char> mask;
    auto push = [&](std::size_t n, bool value) { mask.insert(mask.end(), n, value); };
    for_each_param_tensor(model, [&](const Tensor& t) { push(t.data.size(), true); });
    push(model.decoder.cls_b.size(), true);
    push(model.decoder.box_b.size(), true);
    auto entry_size = [](const PoolEntry& e) {
        return e.prompt.data.size() + e.key.size() + e.adapter.size();
    };
    for (const auto& e : model.shared.entries) push(entry_size(e), true);
    for (const auto& s : model.priv.slabs)
        for (const auto& e : s.entries) push(entry_size(e), s.trainable);
    return mask;
}

void AdamOptimizer::init(const Model& model) {
    const std::size_t n = flatten_params(model).size();
    m.assign(n, 0.0);
    v.assign(n, 0.0);
    trainable = flatten_trainable_mask(model);
    t = 0;
}

void AdamOptimizer::step(Model& model, const ModelGrads& grads) {
    std::vector<double> params = flatten_params(model);
    const std::vector<double> g = flatten_grads(model, grads);
    if (params.size() != m.size())
        throw std::logic_error("AdamOptimizer: not initialized for this model");
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!trainable[i]) continue;
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        params[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
    }
    unflatten_params(model, params);
}

std::vector<double> flatten_grads(const Model& model, const ModelGrads& grads) {
    std::vector<double> out;
    auto push_tensor = [&](const Tensor& t) {
        out.insert(out.end(), t.data.begin(), t.data.end());
    };
    push_tensor(grads.decoder.w_q);
    push_tensor(grads.decoder.w_k);
    push_tensor(grads.decoder.w_v);
    push_tensor(grads.decoder.w_o);
    push_tensor(grads.decoder.object_queries);
    push_tensor(grads.decoder.cls_w);
    push_tensor(grads.decoder.box_w);
    out.insert(out.end(), grads.decoder.cls_b.begin(), grads.decoder.cls_b.end());
    out.insert(out.end(), grads.decoder.box_b.begin(), grads.decoder.box_b.end());
    auto push_entry = [&](const PoolEntryGrad& g) {
        push_tensor(g.d_prompt);
        out.insert(out.end(), g.d_key.begin(), g.d_key.end());
        out.insert(out.end(), g.d_adapter.begin(), g.d_adapter.end());
    };
    for (std::size_t i = 0; i < model.shared.entries.size(); ++i)
        push_entry(grads.pools.shared[i]);
    for (std::size_t s = 0; s < model.priv.slabs.size(); ++s)
        for (std::size_t j = 0; j < model.priv.slabs[s].entries.size(); ++j)
            push_entry(grads.pools.private_slabs[s][j]);
    return out;
}

}  // namespace pdet
