#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "fetnet/errors.hpp"

namespace fetnet {

/// Dense row-major tensor of doubles. Rank 1..4; network activations use
/// (batch, channels, height, width).
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int64_t> shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(checked_numel(shape_), fill) {}

    static Tensor from(std::vector<int64_t> shape, std::vector<double> data) {
        Tensor t;
        t.shape_ = std::move(shape);
        if (static_cast<int64_t>(data.size()) != checked_numel(t.shape_))
            throw ShapeError("Tensor::from: data size does not match shape");
        t.data_ = std::move(data);
        return t;
    }

    static Tensor scalar(double v) { return from({1}, {v}); }

    static Tensor full(std::vector<int64_t> shape, double v) { return Tensor(std::move(shape), v); }

    bool defined() const { return !shape_.empty(); }
    const std::vector<int64_t>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int64_t dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // rank-4 accessor (b, c, y, x)
    double& at(int64_t b, int64_t c, int64_t y, int64_t x) {
        return data_[static_cast<size_t>(((b * shape_[1] + c) * shape_[2] + y) * shape_[3] + x)];
    }
    double at(int64_t b, int64_t c, int64_t y, int64_t x) const {
        return data_[static_cast<size_t>(((b * shape_[1] + c) * shape_[2] + y) * shape_[3] + x)];
    }

    // rank-3 accessor (b, i, j)
    double& at(int64_t b, int64_t i, int64_t j) {
        return data_[static_cast<size_t>((b * shape_[1] + i) * shape_[2] + j)];
    }
    double at(int64_t b, int64_t i, int64_t j) const {
        return data_[static_cast<size_t>((b * shape_[1] + i) * shape_[2] + j)];
    }

    // rank-2 accessor
    double& at(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
    double at(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * shape_[1] + j)]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    std::string shape_str() const {
        std::string s = "(";
        for (size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += ", ";
            s += std::to_string(shape_[i]);
        }
        return s + ")";
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

private:
    static int64_t checked_numel(const std::vector<int64_t>& shape) {
        if (shape.empty()) return 0;
        int64_t n = 1;
        for (int64_t d : shape) {
            if (d <= 0) throw ShapeError("Tensor: nonpositive dimension");
            n *= d;
        }
        return n;
    }

    std::vector<int64_t> shape_;
    std::vector<double> data_;
};

} // namespace fetnet
