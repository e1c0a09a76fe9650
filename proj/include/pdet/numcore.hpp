#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "pdet/tensor.hpp"

namespace pdet {

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);

// Cosine similarity clamped to [-1, 1] so downstream arccos stays in domain.
// Returns nullopt when either vector has zero norm; the caller decides what
// that means (retrieval maps it to weight 0, the DDL loss skips the pair).
std::optional<double> cosine_similarity(std::span<const double> a,
                                        std::span<const double> b);

// Numerically stable softmax (max subtraction). Input must be finite.
std::vector<double> softmax(std::span<const double> x);

// log(sum(exp(x))) with max subtraction.
double log_sum_exp(std::span<const double> x);

using ScalarFn = std::function<double(std::span<const double>)>;

// Central-difference gradient oracle: (f(x+h e_i) - f(x-h e_i)) / (2h).
// Throws if f evaluates to a non-finite value at any probe point.
std::vector<double> finite_diff_grad(const ScalarFn& f,
                                     std::span<const double> x,
                                     double h = 1e-5);

// ||a-b|| / max(||a||, ||b||, floor); the comparison metric used by every
// gradient check in the repo.
double relative_error(std::span<const double> a, std::span<const double> b,
                      double floor = 1e-12);

}  // namespace pdet
