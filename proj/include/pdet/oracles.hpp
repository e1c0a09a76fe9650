#pragma once

#include "pdet/tensor.hpp"

#include <vector>

namespace pdet {

// Reference implementations that are algorithmically independent of the
// production paths they validate. They back the selfcheck command and the
// test suites; nothing in the training pipeline calls them.

struct BruteForceResult {
    std::vector<int> pred_for_gt;
    double total_cost = 0.0;
};

// Exhaustive enumeration of all injective row->column assignments, first
// lexicographic minimum wins. Exponential; for oracle use only.
BruteForceResult brute_force_assignment(const Tensor& cost);

// Plain multi-head attention written as independent scalar loops (no prefix
// machinery, no shared code with prefix_mha).
Tensor naive_mha(const Tensor& q, const Tensor& k, const Tensor& v,
                 std::size_t heads);

}  // namespace pdet
