// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "retnet/error.hpp"

namespace retnet {

/// Dense row-major array of rank 1..3. The universal value carrier for
/// activations, weights and masks. Exported operations never store NaN/Inf;
/// see ensure_finite().
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), data_(checked_size(shape_), T(0)) {}

    Tensor(std::vector<std::size_t> shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (checked_size(shape_) != data_.size())
            throw DimensionError("tensor: shape does not match data length");
    }

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

    static Tensor scalar(T v) { return Tensor({1}, {v}); }

    /// 2-D convenience constructor from nested initializer lists.
    static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows) {
        std::size_t r = rows.size();
        std::size_t c = r ? rows.begin()->size() : 0;
        std::vector<T> flat;
        flat.reserve(r * c);
        for (const auto& row : rows) {
            if (row.size() != c) throw DimensionError("tensor: ragged initializer");
            flat.insert(flat.end(), row.begin(), row.end());
        }
        return Tensor({r, c}, std::move(flat));
    }

    static Tensor vector(std::initializer_list<T> vals) {
        return Tensor({vals.size()}, std::vector<T>(vals));
    }

    std::size_t rank() const { return shape_.size(); }
    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    /// Row/column view of a rank-1 or rank-2 tensor: rank 1 counts as a
    /// single row.
    std::size_t rows() const {
        if (rank() == 1) return 1;
        if (rank() == 2) return shape_[0];
        throw DimensionError("tensor: rows() needs rank <= 2");
    }
    std::size_t cols() const {
        if (rank() == 1) return shape_[0];
        if (rank() == 2) return shape_[1];
        throw DimensionError("tensor: cols() needs rank <= 2");
    }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& raw() { return data_; }
    const std::vector<T>& raw() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(std::size_t i, std::size_t j) { return data_[i * cols() + j]; }
    const T& at(std::size_t i, std::size_t j) const { return data_[i * cols() + j]; }

    T* row(std::size_t i) { return data_.data() + i * cols(); }
    const T* row(std::size_t i) const { return data_.data() + i * cols(); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (const T& v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return Tensor<U>(shape_, std::move(out));
    }

private:
    static std::size_t checked_size(const std::vector<std::size_t>& shape) {
        if (shape.empty() || shape.size() > 3)
            throw DimensionError("tensor: rank must be 1..3");
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        return n;
    }

    std::vector<std::size_t> shape_;
    std::vector<T> data_;
};

using Tensor64 = Tensor<double>;
using Tensor32 = Tensor<float>;

template <typename T>
inline void ensure_finite(const Tensor<T>& t, const char* op) {
    if (!t.all_finite())
        throw NumericError(std::string(op) + ": non-finite value in result");
}

inline std::string shape_str(const std::vector<std::size_t>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

} // namespace retnet
