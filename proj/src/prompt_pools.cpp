#include "pdet/prompt_pools.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "pdet/numcore.hpp"
#include "pdet/rng.hpp"

namespace pdet {

PoolEntry make_pool_entry(std::size_t prompt_len, std::size_t feature_dim,
                          Rng& rng) {
    // Prompt tokens sit in the value/key stream next to O(1) projected
    // queries, so they start at matching scale; keys and adapters only feed
    // the scale-free cosine and keep the smaller classic bound.
    const double key_bound = 0.5 / std::sqrt(static_cast<double>(feature_dim));
    PoolEntry e;
    e.prompt = Tensor::zeros({prompt_len, feature_dim});
    for (double& v : e.prompt.data) v = rng.uniform(-0.5, 0.5);
    e.key.resize(feature_dim);
    for (double& v : e.key) v = rng.uniform(-key_bound, key_bound);
    e.adapter.resize(feature_dim);
    for (double& v : e.adapter) v = rng.uniform(-key_bound, key_bound);
    return e;
}

SharedPool SharedPool::init(std::size_t size, std::size_t prompt_len,
                            std::size_t feature_dim, std::uint64_t seed) {
    if (prompt_len % 2 != 0)
        throw std::invalid_argument("SharedPool: prompt length must be even");
    SharedPool pool;
    pool.prompt_len = prompt_len;
    pool.feature_dim = feature_dim;
    Rng rng(seed);
    pool.entries.reserve(size);
    for (std::size_t i = 0; i < size; ++i)
        pool.entries.push_back(make_pool_entry(prompt_len, feature_dim, rng));
    return pool;
}

void grow_private(PrivatePool& pool, int task_id, std::size_t num_new_classes,
                  std::uint64_t init_seed) {
    if (pool.prompt_len == 0 || pool.feature_dim == 0)
        throw std::logic_error("grow_private: pool dimensions not set");
    if (pool.prompt_len % 2 != 0)
        throw std::invalid_argument("grow_private: prompt length must be even");
    if (num_new_classes == 0)
        throw std::invalid_argument("grow_private: task introduces no classes");
    for (const auto& s : pool.slabs)
        if (s.task_id == task_id)
            throw std::invalid_argument("grow_private: duplicate task id");

    for (auto& s : pool.slabs) s.trainable = false;

    PrivateSlab slab;
    slab.task_id = task_id;
    slab.trainable = true;
    Rng rng(init_seed);
    slab.entries.reserve(num_new_classes);
    for (std::size_t i = 0; i < num_new_classes; ++i)
        slab.entries.push_back(make_pool_entry(pool.prompt_len, pool.feature_dim, rng));
    pool.slabs.push_back(std::move(slab));
}

namespace {

double entry_weight(std::span<const double> query, const PoolEntry& e,
                    std::size_t* zero_norms) {
    std::vector<double> modulated(query.size());
    for (std::size_t d = 0; d < query.size(); ++d)
        modulated[d] = query[d] * e.adapter[d];
    const auto w = cosine_similarity(modulated, e.key);
    if (!w) {
        ++*zero_norms;
        return 0.0;
    }
    return *w;
}

}  // namespace

RetrievalResult retrieve(std::span<const double> query, const SharedPool& shared,
                         const PrivatePool& priv) {
    const std::size_t lp = shared.entries.empty() ? priv.prompt_len : shared.prompt_len;
    const std::size_t dim = shared.entries.empty() ? priv.feature_dim : shared.feature_dim;
    if (lp == 0 || dim == 0)
        throw std::invalid_argument("retrieve: both pools are empty");
    if (query.size() != dim)
        throw std::invalid_argument("retrieve: query dimension mismatch");

    RetrievalResult out;
    out.prompt = Tensor::zeros({lp, dim});
    out.weights.reserve(shared.entries.size() + priv.total_entries());

    auto accumulate = [&](const PoolEntry& e) {
        const double w = entry_weight(query, e, &out.zero_norm_entries);
        out.weights.push_back(w);
        if (w != 0.0)
            for (std::size_t x = 0; x < out.prompt.data.size(); ++x)
                out.prompt.data[x] += w * e.prompt.data[x];
    };

    for (const auto& e : shared.entries) accumulate(e);
    for (const auto& s : priv.slabs)
        for (const auto& e : s.entries) accumulate(e);
    return out;
}

PoolGrads PoolGrads::zeros_like(const SharedPool& shared, const PrivatePool& priv) {
    auto zero_entry = [](const PoolEntry& e) {
        PoolEntryGrad g;
        g.d_prompt = Tensor::zeros(e.prompt.shape);
        g.d_key.assign(e.key.size(), 0.0);
        g.d_adapter.assign(e.adapter.size(), 0.0);
        return g;
    };
    PoolGrads g;
    g.shared.reserve(shared.entries.size());
    for (const auto& e : shared.entries) g.shared.push_back(zero_entry(e));
    g.private_slabs.resize(priv.slabs.size());
    for (std::size_t s = 0; s < priv.slabs.size(); ++s) {
        g.private_slabs[s].reserve(priv.slabs[s].entries.size());
        for (const auto& e : priv.slabs[s].entries)
            g.private_slabs[s].push_back(zero_entry(e));
    }
    return g;
}

namespace {

// d(cos(q (.) A, K)) routed into A and K; the prompt picks up w * dP_r and
// the weight picks up <dP_r, P>.
void entry_backward(std::span<const double> query, const PoolEntry& e,
                    const Tensor& d_prompt, PoolEntryGrad& g) {
    std::vector<double> m(query.size());
    for (std::size_t d = 0; d < query.size(); ++d) m[d] = query[d] * e.adapter[d];
    const double nm = norm(m);
    const double nk = norm(e.key);
    if (nm == 0.0 || nk == 0.0) return;  // weight was pinned to 0

    const double u = std::clamp(dot(m, e.key) / (nm * nk), -1.0, 1.0);

    for (std::size_t x = 0; x < e.prompt.data.size(); ++x)
        g.d_prompt.data[x] += u * d_prompt.data[x];

    double dw = 0.0;
    for (std::size_t x = 0; x < e.prompt.data.size(); ++x)
        dw += d_prompt.data[x] * e.prompt.data[x];
    if (dw == 0.0) return;

    for (std::size_t d = 0; d < query.size(); ++d) {
        const double dm = dw * (e.key[d] / (nm * nk) - u * m[d] / (nm * nm));
        g.d_adapter[d] += dm * query[d];
        g.d_key[d] += dw * (m[d] / (nm * nk) - u * e.key[d] / (nk * nk));
    }
}

}  // namespace

void retrieve_backward(std::span<const double> query, const SharedPool& shared,
                       const PrivatePool& priv, const Tensor& d_prompt,
                       PoolGrads& grads) {
    for (std::size_t i = 0; i < shared.entries.size(); ++i)
        entry_backward(query, shared.entries[i], d_prompt, grads.shared[i]);
    for (std::size_t s = 0; s < priv.slabs.size(); ++s)
        for (std::size_t i = 0; i < priv.slabs[s].entries.size(); ++i)
            entry_backward(query, priv.slabs[s].entries[i], d_prompt,
                           grads.private_slabs[s][i]);
}

std::pair<Tensor, Tensor> split_prefix(const Tensor& prompt) {
    if (prompt.rank() != 2)
        throw std::invalid_argument("split_prefix: prompt must be 2-d");
    const std::size_t lp = prompt.dim(0);
    const std::size_t dim = prompt.dim(1);
    if (lp % 2 != 0) throw std::logic_error("split_prefix: odd prompt length");
    const std::size_t half = lp / 2;
    Tensor pk = Tensor::zeros({half, dim});
    Tensor pv = Tensor::zeros({half, dim});
    std::copy_n(prompt.data.begin(), half * dim, pk.data.begin());
    std::copy_n(prompt.data.begin() + half * dim, half * dim, pv.data.begin());
    return {std::move(pk), std::move(pv)};
}

DdlResult ddl_loss(const SharedPool& shared, const PrivatePool& priv,
                   double theta_ddl, double lambda_ddl) {
    const std::size_t ns = shared.entries.size();
    const std::size_t np = priv.total_entries();
    if (ns == 0 || np == 0)
        throw std::invalid_argument("ddl_loss: both pools must be non-empty");

    DdlResult out;
    out.d_shared.resize(ns);
    for (std::size_t i = 0; i < ns; ++i)
        out.d_shared[i] = Tensor::zeros(shared.entries[i].prompt.shape);
    out.d_private.resize(priv.slabs.size());
    for (std::size_t s = 0; s < priv.slabs.size(); ++s) {
        out.d_private[s].resize(priv.slabs[s].entries.size());
        for (std::size_t j = 0; j < priv.slabs[s].entries.size(); ++j)
            out.d_private[s][j] =
                Tensor::zeros(priv.slabs[s].entries[j].prompt.shape);
    }

    const double coef = lambda_ddl * 2.0 / (static_cast<double>(ns) * static_cast<double>(np));

    for (std::size_t i = 0; i < ns; ++i) {
        const std::vector<double>& p = shared.entries[i].prompt.data;
        const double np_norm = norm(p);
        for (std::size_t s = 0; s < priv.slabs.size(); ++s) {
            for (std::size_t j = 0; j < priv.slabs[s].entries.size(); ++j) {
                const std::vector<double>& q = priv.slabs[s].entries[j].prompt.data;
                const double nq_norm = norm(q);
                if (np_norm == 0.0 || nq_norm == 0.0) {
                    ++out.skipped_pairs;
                    continue;
                }
                const double u = std::clamp(dot(p, q) / (np_norm * nq_norm), -1.0, 1.0);
                const double theta = std::acos(u);
                if (theta >= theta_ddl) continue;

                out.value += coef * (theta_ddl - theta);

                // d/du of (theta_ddl - acos(u)) is 1/sqrt(1-u^2); clip u so
                // the derivative stays finite at the parallel limit.
                const double uc = std::clamp(u, -1.0 + 1e-7, 1.0 - 1e-7);
                const double du = coef / std::sqrt(1.0 - uc * uc);
                for (std::size_t x = 0; x < p.size(); ++x) {
                    out.d_shared[i].data[x] +=
                        du * (q[x] / (np_norm * nq_norm) - u * p[x] / (np_norm * np_norm));
                    out.d_private[s][j].data[x] +=
                        du * (p[x] / (np_norm * nq_norm) - u * q[x] / (nq_norm * nq_norm));
                }
            }
        }
    }
    return out;
}

}  // namespace pdet
