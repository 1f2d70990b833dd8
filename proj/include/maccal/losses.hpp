// SPDX-License-Identifier: Apache-2.0
//
// Training objectives. Every loss is a per-sample function of the
// probability row and a hard class; mixup targets are handled by mixing two
// per-sample losses linearly in lambda.

#pragma once

#include <maccal/datasets.hpp>
#include <maccal/numkernel.hpp>

#include <string>
#include <vector>

namespace maccal {

inline constexpr double kLogFloor = 1e-12;

enum class LossTag { cross_entropy, focal, focal_adaptive, label_smoothing };

struct LossKind {
    LossTag tag = LossTag::cross_entropy;
    double gamma_f = 3.0;   // focal exponent
    double epsilon = 0.05;  // label smoothing mass

    static LossKind ce() { return {}; }
    static LossKind focal(double g) { return {LossTag::focal, g, 0.05}; }
    /// Sample-dependent focal exponent: 5 when p_y < 0.2, else 3.
    static LossKind focal_adaptive() { return {LossTag::focal_adaptive, 3.0, 0.05}; }
    static LossKind label_smoothing(double eps) { return {LossTag::label_smoothing, 3.0, eps}; }

    void validate() const {
        if (!(gamma_f >= 0.0)) {
            throw DomainError("focal gamma must be >= 0");
        }
        if (!(epsilon >= 0.0 && epsilon < 1.0)) {
            throw DomainError("label smoothing epsilon must lie in [0, 1)");
        }
    }
};

[[nodiscard]] inline std::string to_string(LossTag t) {
    switch (t) {
    case LossTag::cross_entropy: return "ce";
    case LossTag::focal: return "focal";
    case LossTag::focal_adaptive: return "flsd";
    case LossTag::label_smoothing: return "ls";
    }
    return "?";
}

/// Hard or mixup targets: sample i contributes
/// lambda_i * loss(y_a) + (1 - lambda_i) * loss(y_b).
struct Targets {
    std::vector<int> primary;
    std::vector<int> secondary;
    std::vector<double> lambda;

    static Targets hard(std::span<const int> labels) {
        Targets t;
        t.primary.assign(labels.begin(), labels.end());
        t.secondary = t.primary;
        t.lambda.assign(labels.size(), 1.0);
        return t;
    }
    static Targets from_mixup(const MixupBatch &b) { return Targets{b.labels_a, b.labels_b, b.lambdas}; }

    [[nodiscard]] std::size_t size() const noexcept { return primary.size(); }
};

struct LossDiagnostics {
    std::size_t floored = 0;  // log arguments clamped to the floor
};

namespace detail {

inline double floored_log(double p, LossDiagnostics *diag) {
    if (p < kLogFloor) {
        if (diag != nullptr) {
            ++diag->floored;
        }
        return std::log(kLogFloor);
    }
    return std::log(p);
}

inline double focal_exponent(const LossKind &k, double p_y) {
    if (k.tag == LossTag::focal_adaptive) {
        return p_y < 0.2 ? 5.0 : 3.0;
    }
    return k.gamma_f;
}

/// Loss of one probability row against hard class y.
inline double sample_loss(const LossKind &k, std::span<const double> p, std::size_t y, LossDiagnostics *diag) {
    switch (k.tag) {
    case LossTag::cross_entropy: return -floored_log(p[y], diag);
    case LossTag::focal:
    case LossTag::focal_adaptive: {
        const double g = focal_exponent(k, p[y]);
        return -std::pow(1.0 - p[y], g) * floored_log(p[y], diag);
    }
    case LossTag::label_smoothing: {
        const std::size_t K = p.size();
        const double off = k.epsilon / static_cast<double>(K - 1);
        double s = 0.0;
        for (std::size_t j = 0; j < K; ++j) {
            const double t = j == y ? 1.0 - k.epsilon : off;
            if (t != 0.0) {
                s -= t * floored_log(p[j], diag);
            }
        }
        return s;
    }
    }
    return 0.0;
}

/// d loss / d logits for one row, accumulated into `g` with weight w.
inline void accumulate_logit_grad(const LossKind &k, std::span<const double> p, std::size_t y, double w,
                                  std::span<double> g) {
    const std::size_t K = p.size();
    switch (k.tag) {
    case LossTag::cross_entropy:
        for (std::size_t j = 0; j < K; ++j) {
            g[j] += w * (p[j] - (j == y ? 1.0 : 0.0));
        }
        return;
    case LossTag::label_smoothing: {
        const double off = k.epsilon / static_cast<double>(K - 1);
        for (std::size_t j = 0; j < K; ++j) {
            g[j] += w * (p[j] - (j == y ? 1.0 - k.epsilon : off));
        }
        return;
    }
    case LossTag::focal:
    case LossTag::focal_adaptive: {
        const double py = p[y];
        const double g_exp = focal_exponent(k, py);
        const double one_minus = 1.0 - py;
        // L = -(1-p)^g log p ; dL/dp = g (1-p)^(g-1) log p - (1-p)^g / p ; dp/dl_j = p (delta_jy - p_j)
        double coeff = 0.0;
        if (one_minus > 0.0) {
            const double logp = std::log(std::max(py, kLogFloor));
            const double pow_gm1 = g_exp == 0.0 ? 0.0 : g_exp * std::pow(one_minus, g_exp - 1.0);
            coeff = pow_gm1 * py * logp - std::pow(one_minus, g_exp);
        }
        for (std::size_t j = 0; j < K; ++j) {
            g[j] += w * coeff * ((j == y ? 1.0 : 0.0) - p[j]);
        }
        return;
    }
    }
}

inline void check_targets(const Matrix &probs, const Targets &t) {
    if (t.primary.size() != probs.rows() || t.secondary.size() != probs.rows() || t.lambda.size() != probs.rows()) {
        throw ShapeError("loss: " + std::to_string(t.size()) + " targets for " + std::to_string(probs.rows()) + " rows");
    }
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (t.primary[i] < 0 || t.secondary[i] < 0 || static_cast<std::size_t>(t.primary[i]) >= probs.cols() ||
            static_cast<std::size_t>(t.secondary[i]) >= probs.cols()) {
            throw DomainError("loss: label outside [0, K)");
        }
    }
}

}  // namespace detail

/// Mean loss over the batch.
[[nodiscard]] inline double loss_value(const LossKind &kind, const Matrix &probs, const Targets &t,
                                       LossDiagnostics *diag = nullptr) {
    detail::check_targets(probs, t);
    if (probs.rows() == 0) {
        return 0.0;
    }
    double total = 0.0;
    for (std::size_t i = 0; i < probs.rows(); ++i) {
        const double lam = t.lambda[i];
        const auto p = probs.row(i);
        double s = lam * detail::sample_loss(kind, p, static_cast<std::size_t>(t.primary[i]), diag);
        if (lam != 1.0) {
            s += (1.0 - lam) * detail::sample_loss(kind, p, static_cast<std::size_t>(t.secondary[i]), diag);
        }
        total += s;
    }
    return total / static_cast<double>(probs.rows());
}

/// Gradient of the mean loss with respect to the logits that produced `probs`.
[[nodiscard]] inline Matrix loss_logit_grad(const LossKind &kind, const Matrix &probs, const Targets &t) {
    detail::check_targets(probs, t);
    Matrix g(probs.rows(), probs.cols());
    const double inv_n = probs.rows() == 0 ? 0.0 : 1.0 / static_cast<double>(probs.rows());
    for (std::size_t i = 0; i < probs.rows(); ++i) {
        const double lam = t.lambda[i];
        const auto p = probs.row(i);
        detail::accumulate_logit_grad(kind, p, static_cast<std::size_t>(t.primary[i]), lam * inv_n, g.row(i));
        if (lam != 1.0) {
            detail::accumulate_logit_grad(kind, p, static_cast<std::size_t>(t.secondary[i]), (1.0 - lam) * inv_n, g.row(i));
        }
    }
    return g;
}

[[nodiscard]] inline double cross_entropy(const Matrix &probs, std::span<const int> labels, LossDiagnostics *diag = nullptr) {
    return loss_value(LossKind::ce(), probs, Targets::hard(labels), diag);
}

[[nodiscard]] inline double focal_loss(const Matrix &probs, std::span<const int> labels, double gamma_f,
                                       LossDiagnostics *diag = nullptr) {
    const auto k = LossKind::focal(gamma_f);
    k.validate();
    return loss_value(k, probs, Targets::hard(labels), diag);
}

/// (1 - eps) on the true class and eps / (K - 1) on each other class.
[[nodiscard]] inline Matrix label_smooth_targets(std::span<const int> labels, std::size_t num_classes, double epsilon) {
    if (!(epsilon >= 0.0 && epsilon < 1.0)) {
        throw DomainError("label smoothing epsilon must lie in [0, 1)");
    }
    if (num_classes < 2) {
        throw DomainError("label smoothing needs K >= 2");
    }
    Matrix t(labels.size(), num_classes, epsilon / static_cast<double>(num_classes - 1));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        t(i, static_cast<std::size_t>(labels[i])) = 1.0 - epsilon;
    }
    return t;
}

/// Cross-entropy against an arbitrary row-stochastic target matrix.
[[nodiscard]] inline double soft_cross_entropy(const Matrix &probs, const Matrix &targets, LossDiagnostics *diag = nullptr) {
    detail::require_same_shape(probs, targets, "soft_cross_entropy");
    double total = 0.0;
    for (std::size_t i = 0; i < probs.rows(); ++i) {
        for (std::size_t j = 0; j < probs.cols(); ++j) {
            if (targets(i, j) != 0.0) {
                total -= targets(i, j) * detail::floored_log(probs(i, j), diag);
            }
        }
    }
    return probs.rows() == 0 ? 0.0 : total / static_cast<double>(probs.rows());
}

}  // namespace maccal
