#include "pdet/numcore.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pdet {

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double norm(std::span<const double> a) {
    return std::sqrt(dot(a, a));
}

std::optional<double> cosine_similarity(std::span<const double> a,
                                        std::span<const double> b) {
    if (a.size() != b.size())
        throw std::invalid_argument("cosine_similarity: length mismatch");
    const double na = norm(a);
    const double nb = norm(b);
    if (na == 0.0 || nb == 0.0) return std::nullopt;
    return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

std::vector<double> softmax(std::span<const double> x) {
    if (x.empty()) return {};
    double mx = x[0];
    for (double v : x) mx = std::max(mx, v);
    std::vector<double> out(x.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = std::exp(x[i] - mx);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

double log_sum_exp(std::span<const double> x) {
    if (x.empty()) throw std::invalid_argument("log_sum_exp: empty input");
    double mx = x[0];
    for (double v : x) mx = std::max(mx, v);
    double sum = 0.0;
    for (double v : x) sum += std::exp(v - mx);
    return mx + std::log(sum);
}

std::vector<double> finite_diff_grad(const ScalarFn& f,
                                     std::span<const double> x, double h) {
    if (h <= 0.0) throw std::invalid_argument("finite_diff_grad: h must be > 0");
    std::vector<double> probe(x.begin(), x.end());
    std::vector<double> grad(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + h;
        const double fp = f(probe);
        probe[i] = orig - h;
        const double fm = f(probe);
        probe[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::runtime_error("finite_diff_grad: non-finite evaluation");
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

double relative_error(std::span<const double> a, std::span<const double> b,
                      double floor) {
    if (a.size() != b.size())
        throw std::invalid_argument("relative_error: length mismatch");
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nb), floor});
    return std::sqrt(diff) / denom;
}

}  // namespace pdet
