#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace pdet {

// Dense row-major tensor of doubles. Shape is dynamic; rank 1..3 is what the
// project actually uses. Invariant: data.size() == product(shape).
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != numel_of(shape))
            throw std::invalid_argument("Tensor: shape/data size mismatch");
    }

    static std::size_t numel_of(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t d : s) n *= d;
        return n;
    }

    static Tensor zeros(std::vector<std::size_t> s) {
        std::size_t n = numel_of(s);
        return Tensor{std::move(s), std::vector<double>(n, 0.0)};
    }

    std::size_t numel() const { return data.size(); }
    std::size_t dim(std::size_t axis) const { return shape.at(axis); }
    std::size_t rank() const { return shape.size(); }

    double& at(std::size_t i) {
        assert(rank() == 1 && i < shape[0]);
        return data[i];
    }
    double at(std::size_t i) const {
        assert(rank() == 1 && i < shape[0]);
        return data[i];
    }
    double& at(std::size_t i, std::size_t j) {
        assert(rank() == 2 && i < shape[0] && j < shape[1]);
        return data[i * shape[1] + j];
    }
    double at(std::size_t i, std::size_t j) const {
        assert(rank() == 2 && i < shape[0] && j < shape[1]);
        return data[i * shape[1] + j];
    }
    double& at(std::size_t i, std::size_t j, std::size_t k) {
        assert(rank() == 3 && i < shape[0] && j < shape[1] && k < shape[2]);
        return data[(i * shape[1] + j) * shape[2] + k];
    }
    double at(std::size_t i, std::size_t j, std::size_t k) const {
        assert(rank() == 3 && i < shape[0] && j < shape[1] && k < shape[2]);
        return data[(i * shape[1] + j) * shape[2] + k];
    }

    // Row view of a rank-2 tensor.
    std::span<double> row(std::size_t i) {
        assert(rank() == 2 && i < shape[0]);
        return {data.data() + i * shape[1], shape[1]};
    }
    std::span<const double> row(std::size_t i) const {
        assert(rank() == 2 && i < shape[0]);
        return {data.data() + i * shape[1], shape[1]};
    }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(double v) {
        for (double& x : data) x = v;
    }

    bool operator==(const Tensor&) const = default;
};

}  // namespace pdet
