#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "strokeseg/errors.hpp"

namespace strokeseg {

/// Dense row-major n-d array. Value semantics; last axis is fastest.
/// Activations use (N,C,H,W), label maps (H,W) or (N,H,W), volumes (D,H,W).
template <typename T>
class TensorT {
public:
    TensorT() = default;

    explicit TensorT(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(static_cast<size_t>(numel_of(shape_)), T{});
    }

    TensorT(std::vector<int> shape, T fill) : shape_(std::move(shape)) {
        data_.assign(static_cast<size_t>(numel_of(shape_)), fill);
    }

    static TensorT zeros(std::vector<int> shape) { return TensorT(std::move(shape)); }

    static TensorT full(std::vector<int> shape, T v) { return TensorT(std::move(shape), v); }

    static TensorT from_data(std::vector<int> shape, std::vector<T> data) {
        TensorT t;
        if (numel_of(shape) != static_cast<std::int64_t>(data.size()))
            throw ShapeError("from_data: shape/data size mismatch");
        t.shape_ = std::move(shape);
        t.data_ = std::move(data);
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // 2-d (rows, cols)
    T& at(int i, int j) { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
    const T& at(int i, int j) const { return data_[static_cast<size_t>(i) * shape_[1] + j]; }

    // 3-d
    T& at(int a, int b, int c) {
        return data_[(static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c];
    }
    const T& at(int a, int b, int c) const {
        return data_[(static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c];
    }

    // 4-d
    T& at(int n, int c, int h, int w) {
        return data_[((static_cast<size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    const T& at(int n, int c, int h, int w) const {
        return data_[((static_cast<size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    void reshape(std::vector<int> new_shape) {
        if (numel_of(new_shape) != numel())
            throw ShapeError("reshape: element count mismatch " + shape_str(shape_) + " -> " +
                             shape_str(new_shape));
        shape_ = std::move(new_shape);
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        if constexpr (std::is_floating_point_v<T>) {
            for (T v : data_)
                if (!std::isfinite(v)) return false;
        }
        return true;
    }

    TensorT& operator+=(const TensorT& o) {
        if (!same_shape(o)) throw ShapeError("operator+=: shape mismatch");
        for (size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }

    TensorT& operator*=(T s) {
        for (auto& v : data_) v *= s;
        return *this;
    }

    static std::int64_t numel_of(const std::vector<int>& shape) {
        std::int64_t n = 1;
        for (int d : shape) {
            if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape));
            n *= d;
        }
        return shape.empty() ? 0 : n;
    }

    static std::string shape_str(const std::vector<int>& shape) {
        std::ostringstream os;
        os << "(";
        for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
        os << ")";
        return os.str();
    }

private:
    std::vector<int> shape_;
    std::vector<T> data_;
};

using Tensor = TensorT<float>;
using IntTensor = TensorT<std::int32_t>;
using ByteTensor = TensorT<std::uint8_t>;

/// Deterministic RNG used throughout; fixed engine so seeds reproduce
/// across platforms and standard-library versions.
using Rng = std::mt19937_64;

/// Fisher-Yates with an explicit draw so results do not depend on
/// std::shuffle's unspecified implementation.
template <typename Seq>
void deterministic_shuffle(Seq& seq, Rng& rng) {
    for (size_t i = seq.size(); i > 1; --i) {
        size_t j = static_cast<size_t>(rng() % i);
        std::swap(seq[i - 1], seq[j]);
    }
}

template <typename T>
TensorT<T> uniform_tensor(std::vector<int> shape, T lo, T hi, Rng& rng) {
    TensorT<T> t(std::move(shape));
    std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(dist(rng));
    return t;
}

template <typename T>
TensorT<T> normal_tensor(std::vector<int> shape, T mean, T stddev, Rng& rng) {
    TensorT<T> t(std::move(shape));
    std::normal_distribution<double> dist(static_cast<double>(mean), static_cast<double>(stddev));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(dist(rng));
    return t;
}

}  // namespace strokeseg
