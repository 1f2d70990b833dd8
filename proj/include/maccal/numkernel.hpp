// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major kernel, softmax and counter-based random streams.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace maccal {

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

struct StateError : std::logic_error {
    using std::logic_error::logic_error;
};

/// Raised when training produces a non-finite loss.
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

class Matrix {
  public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data) : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_) {
            throw ShapeError("matrix data length " + std::to_string(data_.size()) + " != " + std::to_string(rows_) + "x" +
                             std::to_string(cols_));
        }
    }
    Matrix(std::initializer_list<std::initializer_list<double>> rows) : rows_(rows.size()) {
        cols_ = rows_ == 0 ? 0 : rows.begin()->size();
        data_.reserve(rows_ * cols_);
        for (const auto &r : rows) {
            if (r.size() != cols_) {
                throw ShapeError("ragged matrix literal");
            }
            data_.insert(data_.end(), r.begin(), r.end());
        }
    }

    static Matrix ones(std::size_t rows, std::size_t cols) { return Matrix(rows, cols, 1.0); }
    static Matrix zeros(std::size_t rows, std::size_t cols) { return Matrix(rows, cols, 0.0); }
    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            m(i, i) = 1.0;
        }
        return m;
    }

    [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
    [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

    double &operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    [[nodiscard]] std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    [[nodiscard]] std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    [[nodiscard]] std::span<double> values() noexcept { return data_; }
    [[nodiscard]] std::span<const double> values() const noexcept { return data_; }
    [[nodiscard]] const std::vector<double> &storage() const noexcept { return data_; }

    [[nodiscard]] bool same_shape(const Matrix &o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

    friend bool operator==(const Matrix &, const Matrix &) = default;

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

[[nodiscard]] inline std::string shape_string(const Matrix &m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

namespace detail {

inline void require_same_shape(const Matrix &a, const Matrix &b, const char *op) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
    }
}

}  // namespace detail

namespace detail {

/// out += a * b, blocked over the shared dimension so a slab of b stays in cache.
inline void gemm_accumulate(const double *a, std::size_t lda, const double *b, double *out, std::size_t n, std::size_t k,
                            std::size_t m) {
    constexpr std::size_t kBlock = 64;
    for (std::size_t p0 = 0; p0 < k; p0 += kBlock) {
        const std::size_t p1 = std::min(k, p0 + kBlock);
        for (std::size_t i = 0; i < n; ++i) {
            double *__restrict o = out + i * m;
            const double *ar = a + i * lda;
            for (std::size_t p = p0; p < p1; ++p) {
                const double av = ar[p];
                if (av == 0.0) {
                    continue;
                }
                const double *__restrict br = b + p * m;
                for (std::size_t j = 0; j < m; ++j) {
                    o[j] += av * br[j];
                }
            }
        }
    }
}

}  // namespace detail

/// a (n x k) times b (k x m).
[[nodiscard]] inline Matrix matmul(const Matrix &a, const Matrix &b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: " + shape_string(a) + " x " + shape_string(b));
    }
    Matrix out(a.rows(), b.cols());
    detail::gemm_accumulate(a.values().data(), a.cols(), b.values().data(), out.values().data(), a.rows(), a.cols(), b.cols());
    return out;
}

/// transpose(a) times b without materialising the transpose.
[[nodiscard]] inline Matrix matmul_tn(const Matrix &a, const Matrix &b) {
    if (a.rows() != b.rows()) {
        throw ShapeError("matmul_tn: " + shape_string(a) + "^T x " + shape_string(b));
    }
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    Matrix out(k, m);
    double *op = out.values().data();
    for (std::size_t i = 0; i < n; ++i) {
        const double *ar = a.row(i).data();
        const double *__restrict br = b.row(i).data();
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ar[p];
            if (av == 0.0) {
                continue;
            }
            double *__restrict o = op + p * m;
            for (std::size_t j = 0; j < m; ++j) {
                o[j] += av * br[j];
            }
        }
    }
    return out;
}

[[nodiscard]] inline Matrix transpose(const Matrix &a) {
    Matrix out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            out(j, i) = a(i, j);
        }
    }
    return out;
}

/// a times transpose(b).
[[nodiscard]] inline Matrix matmul_nt(const Matrix &a, const Matrix &b) {
    if (a.cols() != b.cols()) {
        throw ShapeError("matmul_nt: " + shape_string(a) + " x " + shape_string(b) + "^T");
    }
    return matmul(a, transpose(b));
}

[[nodiscard]] inline Matrix hadamard(const Matrix &a, const Matrix &b) {
    detail::require_same_shape(a, b, "hadamard");
    Matrix out = a;
    auto o = out.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < o.size(); ++i) {
        o[i] *= bv[i];
    }
    return out;
}

[[nodiscard]] inline Matrix sub(const Matrix &a, const Matrix &b) {
    detail::require_same_shape(a, b, "sub");
    Matrix out = a;
    auto o = out.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < o.size(); ++i) {
        o[i] -= bv[i];
    }
    return out;
}

[[nodiscard]] inline Matrix scale(const Matrix &a, double s) {
    Matrix out = a;
    for (double &v : out.values()) {
        v *= s;
    }
    return out;
}

/// Adds a 1 x cols bias row to every row of a.
[[nodiscard]] inline Matrix add_bias(const Matrix &a, const Matrix &bias) {
    if (bias.rows() != 1 || bias.cols() != a.cols()) {
        throw ShapeError("add_bias: " + shape_string(a) + " + " + shape_string(bias));
    }
    Matrix out = a;
    const double *b = bias.values().data();
    for (std::size_t i = 0; i < out.rows(); ++i) {
        auto r = out.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) {
            r[j] += b[j];
        }
    }
    return out;
}

[[nodiscard]] inline Matrix relu(const Matrix &a) {
    Matrix out = a;
    for (double &v : out.values()) {
        v = v > 0.0 ? v : 0.0;
    }
    return out;
}

/// Gate of the rectifier: 1 where the pre-activation is positive, 0 elsewhere.
[[nodiscard]] inline Matrix relu_grad(const Matrix &pre) {
    Matrix out(pre.rows(), pre.cols());
    auto o = out.values();
    auto p = pre.values();
    for (std::size_t i = 0; i < o.size(); ++i) {
        o[i] = p[i] > 0.0 ? 1.0 : 0.0;
    }
    return out;
}

[[nodiscard]] inline std::vector<std::size_t> argmax_row(const Matrix &a) {
    std::vector<std::size_t> out(a.rows(), 0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto r = a.row(i);
        out[i] = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
    }
    return out;
}

[[nodiscard]] inline std::vector<double> row_max(const Matrix &a) {
    std::vector<double> out(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto r = a.row(i);
        out[i] = *std::max_element(r.begin(), r.end());
    }
    return out;
}

[[nodiscard]] inline Matrix softmax_rows(const Matrix &logits) {
    Matrix out(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        auto in = logits.row(i);
        auto o = out.row(i);
        const double mx = *std::max_element(in.begin(), in.end());
        double total = 0.0;
        for (std::size_t j = 0; j < in.size(); ++j) {
            o[j] = std::exp(in[j] - mx);
            total += o[j];
        }
        for (double &v : o) {
            v /= total;
        }
    }
    return out;
}

[[nodiscard]] inline bool all_finite(const Matrix &a) {
    return std::all_of(a.values().begin(), a.values().end(), [](double v) { return std::isfinite(v); });
}

/// Counter-based generator: the k-th draw of stream (seed, id) is a pure
/// function of (seed, id, k), so streams never share state and derived
/// streams are order independent.
class RngStream {
  public:
    RngStream() = default;
    explicit RngStream(std::uint64_t seed, std::uint64_t stream_id = 0) noexcept
        : seed_(seed), stream_(stream_id), key_(mix(mix(seed ^ 0x6a09e667f3bcc909ULL) ^ (stream_id * 0x9e3779b97f4a7c15ULL))) {}

    [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
    [[nodiscard]] std::uint64_t stream_id() const noexcept { return stream_; }
    [[nodiscard]] std::uint64_t counter() const noexcept { return counter_; }

    /// Child stream keyed by this stream's identity and `sub`; does not advance this stream.
    [[nodiscard]] RngStream derive(std::uint64_t sub) const noexcept {
        return RngStream(seed_, mix(key_ ^ mix(sub + 0x3c6ef372fe94f82bULL)));
    }

    std::uint64_t next_u64() noexcept { return mix(key_ + 0x9e3779b97f4a7c15ULL * ++counter_); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform in (0, 1).
    double uniform_open() noexcept { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Unbiased integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) {
            throw DomainError("RngStream::below: n must be positive");
        }
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t v = next_u64();
        while (v >= limit) {
            v = next_u64();
        }
        return v % n;
    }

    double normal() noexcept {
        const double u1 = uniform_open();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Gamma(shape, 1) by Marsaglia-Tsang, with the u^(1/shape) boost for shape < 1.
    double gamma(double shape) {
        if (!(shape > 0.0)) {
            throw DomainError("gamma shape must be positive");
        }
        if (shape < 1.0) {
            const double g = gamma(shape + 1.0);
            return g * std::pow(uniform_open(), 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = 0.0, v = 0.0;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = uniform_open();
            if (u < 1.0 - 0.0331 * x * x * x * x) {
                return d * v;
            }
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) {
                return d * v;
            }
        }
    }

    /// Beta(a, b) as the ratio X / (X + Y) of independent Gamma(a), Gamma(b).
    double beta(double a, double b) {
        const double x = gamma(a);
        const double y = gamma(b);
        const double s = x + y;
        // both draws underflowed (tiny shapes): fall back to the limiting two-point law
        if (s == 0.0) {
            return uniform() < a / (a + b) ? 1.0 : 0.0;
        }
        return x / s;
    }

    template <typename T>
    void shuffle(std::vector<T> &v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = below(i);
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t seed_ = 0;
    std::uint64_t stream_ = 0;
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

[[nodiscard]] inline Matrix bernoulli_matrix(std::size_t rows, std::size_t cols, double q, RngStream &rng) {
    if (!(q >= 0.0 && q <= 1.0)) {
        throw DomainError("bernoulli_matrix: q must lie in [0, 1], got " + std::to_string(q));
    }
    Matrix out(rows, cols);
    for (double &v : out.values()) {
        v = rng.uniform() < q ? 1.0 : 0.0;
    }
    return out;
}

/// FNV-1a over the raw bytes of a sequence of doubles.
[[nodiscard]] inline std::uint64_t hash_values(std::span<const double> values, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (double v : values) {
        std::uint64_t bits = 0;
        static_assert(sizeof(bits) == sizeof(v));
        std::memcpy(&bits, &v, sizeof(v));
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xffU;
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

[[nodiscard]] inline std::uint64_t hash_string(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace maccal
