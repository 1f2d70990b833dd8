// SPDX-License-Identifier: Apache-2.0
//
// Synthetic Gaussian-blob datasets, corruption ladder, mixup and CSV I/O.

#pragma once

#include <maccal/numkernel.hpp>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace maccal {

struct Dataset {
    Matrix features;  // N x d
    std::vector<int> labels;
    std::size_t num_classes = 0;
    std::vector<std::size_t> class_counts;

    [[nodiscard]] std::size_t size() const noexcept { return labels.size(); }
    [[nodiscard]] std::size_t dim() const noexcept { return features.cols(); }
};

/// Recomputes class counts and checks the label/feature invariants.
inline void finalize(Dataset &ds) {
    if (ds.features.rows() != ds.labels.size()) {
        throw ShapeError("dataset: " + std::to_string(ds.features.rows()) + " feature rows but " +
                         std::to_string(ds.labels.size()) + " labels");
    }
    ds.class_counts.assign(ds.num_classes, 0);
    for (int y : ds.labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= ds.num_classes) {
            throw DomainError("dataset: label " + std::to_string(y) + " outside [0, " + std::to_string(ds.num_classes) + ")");
        }
        ++ds.class_counts[static_cast<std::size_t>(y)];
    }
}

[[nodiscard]] inline Dataset subset(const Dataset &ds, std::span<const std::size_t> idx) {
    Dataset out;
    out.num_classes = ds.num_classes;
    out.features = Matrix(idx.size(), ds.dim());
    out.labels.resize(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        auto src = ds.features.row(idx[r]);
        std::copy(src.begin(), src.end(), out.features.row(r).begin());
        out.labels[r] = ds.labels[idx[r]];
    }
    finalize(out);
    return out;
}

struct BlobSpec {
    std::size_t num_classes = 5;
    std::size_t dim = 20;
    std::size_t per_class = 1000;
    double spread = 0.42;
    std::uint64_t seed = 1;
};

/// Class centres: seeded Gaussian directions projected onto the unit sphere.
[[nodiscard]] inline Matrix blob_centers(std::size_t num_classes, std::size_t dim, std::uint64_t seed) {
    RngStream rng(seed, 0xb10b);
    Matrix centers(num_classes, dim);
    for (std::size_t k = 0; k < num_classes; ++k) {
        auto row = centers.row(k);
        double norm = 0.0;
        for (double &v : row) {
            v = rng.normal();
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (double &v : row) {
            v /= norm;
        }
    }
    return centers;
}

/// Samples are ordered class-major: all of class 0, then class 1, and so on.
[[nodiscard]] inline Dataset gen_blobs(const BlobSpec &spec) {
    if (spec.num_classes < 2 || spec.dim < 2 || spec.per_class < 1 || !(spec.spread > 0.0)) {
        throw DomainError("gen_blobs: need classes >= 2, dim >= 2, per_class >= 1, spread > 0");
    }
    const Matrix centers = blob_centers(spec.num_classes, spec.dim, spec.seed);
    RngStream rng(spec.seed, 0xb10b + 1);
    Dataset ds;
    ds.num_classes = spec.num_classes;
    ds.features = Matrix(spec.num_classes * spec.per_class, spec.dim);
    ds.labels.resize(ds.features.rows());
    for (std::size_t k = 0; k < spec.num_classes; ++k) {
        for (std::size_t s = 0; s < spec.per_class; ++s) {
            const std::size_t r = k * spec.per_class + s;
            auto row = ds.features.row(r);
            for (std::size_t j = 0; j < spec.dim; ++j) {
                row[j] = centers(k, j) + spec.spread * rng.normal();
            }
            ds.labels[r] = static_cast<int>(k);
        }
    }
    finalize(ds);
    return ds;
}

constexpr int kMaxSeverity = 5;

/// Noise scale at severity 1: a quarter of the pooled feature standard deviation.
[[nodiscard]] inline double corruption_base_sigma(const Dataset &data) {
    const auto v = data.features.values();
    if (v.empty()) {
        return 0.0;
    }
    double mean = 0.0;
    for (double x : v) {
        mean += x;
    }
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) {
        var += (x - mean) * (x - mean);
    }
    var /= static_cast<double>(v.size());
    return 0.25 * std::sqrt(var);
}

/// Additive Gaussian noise with sigma = severity * base sigma. The same
/// standard-normal draws are reused across severities for a given seed, so
/// perturbation magnitude is monotone in severity sample by sample.
[[nodiscard]] inline Dataset corrupt(const Dataset &data, int severity, std::uint64_t seed) {
    if (severity < 1 || severity > kMaxSeverity) {
        throw DomainError("corrupt: severity must be in 1..5, got " + std::to_string(severity));
    }
    const double sigma = severity * corruption_base_sigma(data);
    RngStream rng(seed, 0xc0 + 0x1);
    Dataset out = data;
    for (double &x : out.features.values()) {
        x += sigma * rng.normal();
    }
    return out;
}

struct MixupBatch {
    Matrix mixed_features;
    std::vector<int> labels_a;
    std::vector<int> labels_b;
    std::vector<double> lambdas;
    double alpha = 0.0;
};

/// Row-wise x = lambda * a + (1 - lambda) * b with caller-chosen lambdas.
[[nodiscard]] inline MixupBatch mixup_with_lambdas(const Matrix &a, std::span<const int> labels_a, const Matrix &b,
                                                   std::span<const int> labels_b, std::vector<double> lambdas) {
    if (!a.same_shape(b) || labels_a.size() != a.rows() || labels_b.size() != b.rows() || lambdas.size() != a.rows()) {
        throw ShapeError("mixup: batch shapes differ");
    }
    MixupBatch out;
    out.mixed_features = Matrix(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double lam = lambdas[i];
        if (!(lam >= 0.0 && lam <= 1.0)) {
            throw DomainError("mixup: lambda outside [0, 1]");
        }
        auto xa = a.row(i);
        auto xb = b.row(i);
        auto o = out.mixed_features.row(i);
        for (std::size_t j = 0; j < o.size(); ++j) {
            o[j] = lam * xa[j] + (1.0 - lam) * xb[j];
        }
    }
    out.labels_a.assign(labels_a.begin(), labels_a.end());
    out.labels_b.assign(labels_b.begin(), labels_b.end());
    out.lambdas = std::move(lambdas);
    return out;
}

/// Per-row lambda ~ Beta(alpha, alpha).
[[nodiscard]] inline MixupBatch mixup_batch(const Matrix &a, std::span<const int> labels_a, const Matrix &b,
                                            std::span<const int> labels_b, double alpha, RngStream &rng) {
    if (!(alpha > 0.0)) {
        throw DomainError("mixup: alpha must be positive");
    }
    std::vector<double> lambdas(a.rows());
    for (double &l : lambdas) {
        l = rng.beta(alpha, alpha);
    }
    auto out = mixup_with_lambdas(a, labels_a, b, labels_b, std::move(lambdas));
    out.alpha = alpha;
    return out;
}

struct Split {
    Dataset train;
    Dataset val;
    Dataset test;
};

struct SplitFractions {
    double train = 0.7;
    double val = 0.1;
    // test receives the remainder
};

[[nodiscard]] inline Split split(const Dataset &data, SplitFractions fr, std::uint64_t seed) {
    if (fr.train <= 0.0 || fr.val < 0.0 || fr.train + fr.val > 1.0) {
        throw DomainError("split: fractions must satisfy train > 0, val >= 0, train + val <= 1");
    }
    std::vector<std::size_t> idx(data.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        idx[i] = i;
    }
    RngStream rng(seed, 0x5917);
    rng.shuffle(idx);
    const auto n_train = static_cast<std::size_t>(fr.train * static_cast<double>(idx.size()));
    const auto n_val = static_cast<std::size_t>(fr.val * static_cast<double>(idx.size()));
    std::span<const std::size_t> all(idx);
    return Split{subset(data, all.subspan(0, n_train)), subset(data, all.subspan(n_train, n_val)),
                 subset(data, all.subspan(n_train + n_val))};
}

namespace detail {

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline double parse_double(std::string_view s, const std::string &where) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw DomainError(where + ": bad number '" + std::string(s) + "'");
    }
    return v;
}

}  // namespace detail

inline void write_csv(std::ostream &os, const Dataset &ds) {
    os << "label";
    for (std::size_t j = 0; j < ds.dim(); ++j) {
        os << ",f" << j;
    }
    os << '\n';
    for (std::size_t i = 0; i < ds.size(); ++i) {
        os << ds.labels[i];
        for (double v : ds.features.row(i)) {
            os << ',' << detail::format_double(v);
        }
        os << '\n';
    }
}

inline void save_csv(const std::string &path, const Dataset &ds) {
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw std::runtime_error("cannot open " + path + " for writing");
    }
    write_csv(os, ds);
    if (!os) {
        throw std::runtime_error("write failed: " + path);
    }
}

/// `num_classes == 0` infers K as max label + 1.
[[nodiscard]] inline Dataset read_csv(std::istream &is, std::size_t num_classes = 0, const std::string &name = "csv") {
    std::string line;
    if (!std::getline(is, line)) {
        throw DomainError(name + ": missing header");
    }
    if (!line.empty() && line.back() == '\r') {
        line.pop_back();
    }
    std::size_t dim = 0;
    {
        std::stringstream hs(line);
        std::string cell;
        std::getline(hs, cell, ',');
        if (cell != "label") {
            throw DomainError(name + ": header must start with 'label'");
        }
        while (std::getline(hs, cell, ',')) {
            if (cell != "f" + std::to_string(dim)) {
                throw DomainError(name + ": unexpected header column '" + cell + "'");
            }
            ++dim;
        }
    }
    std::vector<double> values;
    std::vector<int> labels;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        const std::string where = name + ":" + std::to_string(lineno);
        std::string_view rest(line);
        std::size_t col = 0;
        while (true) {
            const auto comma = rest.find(',');
            const auto cell = rest.substr(0, comma);
            if (col == 0) {
                int y = 0;
                const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), y);
                if (ec != std::errc() || ptr != cell.data() + cell.size() || y < 0) {
                    throw DomainError(where + ": bad label '" + std::string(cell) + "'");
                }
                labels.push_back(y);
            } else {
                values.push_back(detail::parse_double(cell, where));
            }
            ++col;
            if (comma == std::string_view::npos) {
                break;
            }
            rest.remove_prefix(comma + 1);
        }
        if (col != dim + 1) {
            throw ShapeError(where + ": expected " + std::to_string(dim + 1) + " columns, got " + std::to_string(col));
        }
    }
    Dataset ds;
    ds.features = Matrix(labels.size(), dim, std::move(values));
    ds.labels = std::move(labels);
    if (num_classes == 0) {
        for (int y : ds.labels) {
            num_classes = std::max(num_classes, static_cast<std::size_t>(y) + 1);
        }
    }
    ds.num_classes = num_classes;
    finalize(ds);
    return ds;
}

[[nodiscard]] inline Dataset load_csv(const std::string &path, std::size_t num_classes = 0) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw std::runtime_error("cannot open " + path);
    }
    return read_csv(is, num_classes, path);
}

}  // namespace maccal
