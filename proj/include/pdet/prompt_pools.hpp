#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pdet/tensor.hpp"

namespace pdet {

// One retrievable unit: prompt tokens (L_p x D), a key and a query adapter.
struct PoolEntry {
    Tensor prompt;
    std::vector<double> key;
    std::vector<double> adapter;

    bool operator==(const PoolEntry&) const = default;
};

PoolEntry make_pool_entry(std::size_t prompt_len, std::size_t feature_dim,
                          class Rng& rng);

// Task-general pool, trainable at every task. Size is fixed for the run.
struct SharedPool {
    std::size_t prompt_len = 0;
    std::size_t feature_dim = 0;
    std::vector<PoolEntry> entries;

    static SharedPool init(std::size_t size, std::size_t prompt_len,
                           std::size_t feature_dim, std::uint64_t seed);
};

// Per-task slab of the private pool. Exactly the newest slab is trainable;
// everything older is frozen for the rest of the run.
struct PrivateSlab {
    int task_id = 0;
    bool trainable = true;
    std::vector<PoolEntry> entries;
};

struct PrivatePool {
    std::size_t prompt_len = 0;
    std::size_t feature_dim = 0;
    std::vector<PrivateSlab> slabs;

    std::size_t total_entries() const {
        std::size_t n = 0;
        for (const auto& s : slabs) n += s.entries.size();
        return n;
    }
};

// Appends a slab with one entry per newly introduced class and freezes all
// previous slabs. Throws on a duplicate task id.
void grow_private(PrivatePool& pool, int task_id, std::size_t num_new_classes,
                  std::uint64_t init_seed);

// Retrieval: w_i = cos(query (.) A_i, K_i) over every shared and private
// entry (shared entries first, then private slabs in task order), and
// P_r = sum_i w_i P_i. Raw cosine weights, possibly negative, no top-K and
// no softmax. Zero-norm modulated query or key makes that weight 0 and is
// counted rather than silently dropped.
struct RetrievalResult {
    Tensor prompt;                 // L_p x D
    std::vector<double> weights;   // N_s + sum_t N_p^t
    std::size_t zero_norm_entries = 0;
};

RetrievalResult retrieve(std::span<const double> query, const SharedPool& shared,
                         const PrivatePool& priv);

struct PoolEntryGrad {
    Tensor d_prompt;
    std::vector<double> d_key;
    std::vector<double> d_adapter;
};

struct PoolGrads {
    std::vector<PoolEntryGrad> shared;
    std::vector<std::vector<PoolEntryGrad>> private_slabs;

    static PoolGrads zeros_like(const SharedPool& shared, const PrivatePool& priv);
};

// Accumulates d(loss)/d(entries) given d(loss)/d(P_r). The query is produced
// by the frozen backbone, so no query gradient is reported.
void retrieve_backward(std::span<const double> query, const SharedPool& shared,
                       const PrivatePool& priv, const Tensor& d_prompt,
                       PoolGrads& grads);

// First half of the rows becomes the key prefix, second half the value
// prefix. L_p is even by pool construction.
std::pair<Tensor, Tensor> split_prefix(const Tensor& prompt);

// Hinge on pairwise angles between flattened shared and private prompts:
// lambda * (2 / (N_s * N_p)) * sum max(0, theta_ddl - theta_ij).
// Gradients are produced for every entry, frozen or not; whether they are
// applied is the optimizer's decision. Pairs with a zero-norm prompt are
// skipped and counted.
struct DdlResult {
    double value = 0.0;
    std::vector<Tensor> d_shared;                 // per shared entry, L_p x D
    std::vector<std::vector<Tensor>> d_private;   // per slab, per entry
    std::size_t skipped_pairs = 0;
};

DdlResult ddl_loss(const SharedPool& shared, const PrivatePool& priv,
                   double theta_ddl, double lambda_ddl);

}  // namespace pdet
