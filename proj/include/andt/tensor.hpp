#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace andt {

/// Base class for everything this library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor extents do not line up (matmul inner dims, conv arithmetic, ...).
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A configuration value is inconsistent or unsupported.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Dataset content violates its contract (label gaps, count mismatches, ...).
class DataError : public Error {
public:
    using Error::Error;
};

/// File could not be read, written, or decoded.
class IoError : public Error {
public:
    using Error::Error;
};

/// A non-finite value appeared where the math requires finite ones.
class NumericError : public Error {
public:
    using Error::Error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

/// Dense row-major n-dimensional array. Value-semantic; the scalar type is
/// float or double (accumulations inside kernels always run in double).
template <typename S>
class Tensor {
    static_assert(std::is_floating_point_v<S>, "Tensor scalar must be float or double");

public:
    Tensor() = default;

    explicit Tensor(Shape shape)
        : shape_(std::move(shape)), data_(shape_numel(shape_), S(0)) {}

    Tensor(Shape shape, std::vector<S> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != shape_numel(shape_))
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
    }

    Tensor(Shape shape, std::initializer_list<S> data)
        : Tensor(std::move(shape), std::vector<S>(data)) {}

    static Tensor full(Shape shape, S value) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), value);
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::size_t ndim() const { return shape_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    S* data() { return data_.data(); }
    const S* data() const { return data_.data(); }
    const std::vector<S>& vec() const { return data_; }

    S& operator[](std::size_t i) { return data_[i]; }
    const S& operator[](std::size_t i) const { return data_[i]; }

    template <typename... Ix>
    S& at(Ix... ix) {
        return data_[offset_of(ix...)];
    }
    template <typename... Ix>
    const S& at(Ix... ix) const {
        return data_[offset_of(ix...)];
    }

    /// Same data, new shape; element count must match.
    Tensor with_shape(Shape shape) const& {
        Tensor t = *this;
        return std::move(t).with_shape(std::move(shape));
    }
    Tensor with_shape(Shape shape) && {
        if (shape_numel(shape) != data_.size())
            throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        shape_ = std::move(shape);
        return std::move(*this);
    }

    bool all_finite() const {
        for (S v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename T>
    Tensor<T> cast() const {
        std::vector<T> out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<T>(data_[i]);
        return Tensor<T>(shape_, std::move(out));
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    template <typename... Ix>
    std::size_t offset_of(Ix... ix) const {
        const std::size_t idx[] = {static_cast<std::size_t>(ix)...};
        constexpr std::size_t rank = sizeof...(Ix);
        std::size_t off = 0;
        for (std::size_t d = 0; d < rank; ++d) off = off * shape_[d] + idx[d];
        return off;
    }

    Shape shape_;
    std::vector<S> data_;
};

template <typename S>
Tensor<S> zeros_like(const Tensor<S>& t) {
    return Tensor<S>(t.shape());
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("add: shapes differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<S> c(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) c[i] = a[i] + b[i];
    return c;
}

template <typename S>
void add_into(Tensor<S>& acc, const Tensor<S>& t, double scale = 1.0) {
    if (acc.shape() != t.shape())
        throw ShapeError("add_into: shapes differ " + shape_str(acc.shape()) + " vs " + shape_str(t.shape()));
    for (std::size_t i = 0; i < t.numel(); ++i)
        acc[i] = static_cast<S>(static_cast<double>(acc[i]) + scale * static_cast<double>(t[i]));
}

template <typename S>
Tensor<S> scaled(const Tensor<S>& t, double s) {
    Tensor<S> out(t.shape());
    for (std::size_t i = 0; i < t.numel(); ++i) out[i] = static_cast<S>(static_cast<double>(t[i]) * s);
    return out;
}

template <typename S>
double sum(const Tensor<S>& t) {
    double acc = 0.0;
    for (std::size_t i = 0; i < t.numel(); ++i) acc += static_cast<double>(t[i]);
    return acc;
}

template <typename S>
double max_abs(const Tensor<S>& t) {
    double m = 0.0;
    for (std::size_t i = 0; i < t.numel(); ++i)
        m = std::max(m, std::abs(static_cast<double>(t[i])));
    return m;
}

template <typename S>
double max_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("max_abs_diff: shapes differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

/// Deterministic random source; every stochastic choice in the library draws
/// from one of these so that a seed pins the result exactly.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    double uniform(double lo, double hi) {
        std::uniform_real_distribution<double> d(lo, hi);
        return d(gen_);
    }

    double normal(double mean = 0.0, double stddev = 1.0) {
        std::normal_distribution<double> d(mean, stddev);
        return d(gen_);
    }

    /// Normal draw rejected outside mean +/- clip_sigmas * stddev.
    double truncated_normal(double mean, double stddev, double clip_sigmas = 2.0) {
        for (;;) {
            double v = normal(mean, stddev);
            if (std::abs(v - mean) <= clip_sigmas * stddev) return v;
        }
    }

    /// Uniform integer in [0, bound).
    std::uint64_t integer(std::uint64_t bound) {
        std::uniform_int_distribution<std::uint64_t> d(0, bound - 1);
        return d(gen_);
    }

    std::mt19937_64& engine() { return gen_; }

private:
    std::mt19937_64 gen_;
};

template <typename S>
Tensor<S> random_normal(Rng& rng, Shape shape, double mean = 0.0, double stddev = 1.0) {
    Tensor<S> t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(rng.normal(mean, stddev));
    return t;
}

template <typename S>
Tensor<S> random_uniform(Rng& rng, Shape shape, double lo, double hi) {
    Tensor<S> t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(rng.uniform(lo, hi));
    return t;
}

}  // namespace andt
