// SPDX-License-Identifier: Apache-2.0
//
// Calibration (ECE / AECE / MCE), accuracy, NLL and OOD separation metrics.

#pragma once

#include <maccal/losses.hpp>
#include <maccal/numkernel.hpp>

#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace maccal {

inline constexpr std::size_t kDefaultBins = 15;

/// Probabilities with their labels; confidence is the row max and the
/// prediction is the row argmax.
class PredictionSet {
  public:
    PredictionSet(Matrix probs, std::vector<int> labels) : probs_(std::move(probs)), labels_(std::move(labels)) {
        if (probs_.rows() != labels_.size()) {
            throw ShapeError("prediction set: " + std::to_string(probs_.rows()) + " rows, " + std::to_string(labels_.size()) +
                             " labels");
        }
        confidence_ = row_max(probs_);
        prediction_ = argmax_row(probs_);
    }

    [[nodiscard]] const Matrix &probs() const noexcept { return probs_; }
    [[nodiscard]] std::span<const int> labels() const noexcept { return labels_; }
    [[nodiscard]] std::span<const double> confidences() const noexcept { return confidence_; }
    [[nodiscard]] std::span<const std::size_t> predictions() const noexcept { return prediction_; }
    [[nodiscard]] std::size_t size() const noexcept { return labels_.size(); }
    [[nodiscard]] bool correct(std::size_t i) const noexcept {
        return static_cast<int>(prediction_[i]) == labels_[i];
    }

  private:
    Matrix probs_;
    std::vector<int> labels_;
    std::vector<double> confidence_;
    std::vector<std::size_t> prediction_;
};

struct ReliabilityBin {
    double lo = 0.0;
    double hi = 0.0;
    std::size_t count = 0;
    double avg_confidence = 0.0;
    double avg_accuracy = 0.0;

    [[nodiscard]] double gap() const noexcept { return std::abs(avg_accuracy - avg_confidence); }
};

struct BinnedError {
    double value = 0.0;
    std::vector<ReliabilityBin> bins;
};

/// Sum over bins of (count / N) * |acc - conf|; empty bins contribute nothing.
[[nodiscard]] inline double weighted_gap(std::span<const ReliabilityBin> bins) {
    std::size_t n = 0;
    for (const auto &b : bins) {
        n += b.count;
    }
    if (n == 0) {
        return 0.0;
    }
    double s = 0.0;
    for (const auto &b : bins) {
        if (b.count > 0) {
            s += static_cast<double>(b.count) / static_cast<double>(n) * b.gap();
        }
    }
    return s;
}

namespace detail {

inline void require_nonempty(const PredictionSet &p, std::size_t num_bins) {
    if (p.size() == 0) {
        throw DomainError("calibration metric on an empty prediction set");
    }
    if (num_bins == 0) {
        throw DomainError("number of bins must be >= 1");
    }
}

/// Bin m covers [m/M, (m+1)/M); confidence 1.0 falls into the last bin.
inline std::size_t equal_width_bin(double confidence, std::size_t num_bins) {
    const auto m = static_cast<std::size_t>(confidence * static_cast<double>(num_bins));
    return std::min(m, num_bins - 1);
}

}  // namespace detail

[[nodiscard]] inline std::vector<ReliabilityBin> equal_width_bins(const PredictionSet &p, std::size_t num_bins) {
    detail::require_nonempty(p, num_bins);
    std::vector<ReliabilityBin> bins(num_bins);
    std::vector<double> conf_sum(num_bins, 0.0), acc_sum(num_bins, 0.0);
    for (std::size_t i = 0; i < p.size(); ++i) {
        const std::size_t m = detail::equal_width_bin(p.confidences()[i], num_bins);
        ++bins[m].count;
        conf_sum[m] += p.confidences()[i];
        acc_sum[m] += p.correct(i) ? 1.0 : 0.0;
    }
    for (std::size_t m = 0; m < num_bins; ++m) {
        bins[m].lo = static_cast<double>(m) / static_cast<double>(num_bins);
        bins[m].hi = static_cast<double>(m + 1) / static_cast<double>(num_bins);
        if (bins[m].count > 0) {
            bins[m].avg_confidence = conf_sum[m] / static_cast<double>(bins[m].count);
            bins[m].avg_accuracy = acc_sum[m] / static_cast<double>(bins[m].count);
        }
    }
    return bins;
}

[[nodiscard]] inline BinnedError ece(const PredictionSet &p, std::size_t num_bins = kDefaultBins) {
    BinnedError out;
    out.bins = equal_width_bins(p, num_bins);
    out.value = weighted_gap(out.bins);
    return out;
}

/// Equal-count bins over confidence-sorted samples (ties broken by original
/// index). The first N mod M bins hold one extra sample. Bin bounds are the
/// smallest and largest confidence inside the bin.
[[nodiscard]] inline BinnedError aece(const PredictionSet &p, std::size_t num_bins = kDefaultBins) {
    detail::require_nonempty(p, num_bins);
    if (p.size() < num_bins) {
        throw DomainError("aece: need at least as many samples as bins");
    }
    std::vector<std::size_t> order(p.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto conf = p.confidences();
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return conf[a] < conf[b]; });

    const std::size_t base = p.size() / num_bins;
    const std::size_t extra = p.size() % num_bins;
    BinnedError out;
    out.bins.resize(num_bins);
    std::size_t pos = 0;
    for (std::size_t m = 0; m < num_bins; ++m) {
        const std::size_t len = base + (m < extra ? 1 : 0);
        auto &bin = out.bins[m];
        bin.count = len;
        bin.lo = conf[order[pos]];
        bin.hi = conf[order[pos + len - 1]];
        double cs = 0.0, as = 0.0;
        for (std::size_t i = pos; i < pos + len; ++i) {
            cs += conf[order[i]];
            as += p.correct(order[i]) ? 1.0 : 0.0;
        }
        bin.avg_confidence = cs / static_cast<double>(len);
        bin.avg_accuracy = as / static_cast<double>(len);
        pos += len;
    }
    out.value = weighted_gap(out.bins);
    return out;
}

/// Largest gap over the non-empty equal-width bins.
[[nodiscard]] inline double mce(const PredictionSet &p, std::size_t num_bins = kDefaultBins) {
    double worst = 0.0;
    for (const auto &b : equal_width_bins(p, num_bins)) {
        if (b.count > 0) {
            worst = std::max(worst, b.gap());
        }
    }
    return worst;
}

[[nodiscard]] inline double accuracy(const PredictionSet &p) {
    if (p.size() == 0) {
        throw DomainError("accuracy of an empty prediction set");
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        hits += p.correct(i) ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(p.size());
}

[[nodiscard]] inline double avg_confidence(const PredictionSet &p) {
    if (p.size() == 0) {
        throw DomainError("confidence of an empty prediction set");
    }
    const auto c = p.confidences();
    return std::accumulate(c.begin(), c.end(), 0.0) / static_cast<double>(c.size());
}

[[nodiscard]] inline double nll_metric(const PredictionSet &p, LossDiagnostics *diag = nullptr) {
    return cross_entropy(p.probs(), p.labels(), diag);
}

struct OodScores {
    double auroc = 0.5;
    double fpr95 = 1.0;
    std::size_t in_count = 0;
    std::size_t out_count = 0;
};

struct CalibrationReport {
    std::size_t num_samples = 0;
    std::size_t num_bins = kDefaultBins;
    double accuracy = 0.0;
    double avg_confidence = 0.0;
    double ece = 0.0;
    double aece = 0.0;
    double mce = 0.0;
    double nll = 0.0;
    std::vector<ReliabilityBin> bins;
    std::optional<OodScores> ood;
};

[[nodiscard]] inline CalibrationReport evaluate(const PredictionSet &p, std::size_t num_bins = kDefaultBins) {
    CalibrationReport r;
    r.num_samples = p.size();
    r.num_bins = num_bins;
    r.accuracy = accuracy(p);
    r.avg_confidence = avg_confidence(p);
    auto e = ece(p, num_bins);
    r.ece = e.value;
    r.bins = std::move(e.bins);
    r.aece = p.size() >= num_bins ? aece(p, num_bins).value : r.ece;
    r.mce = mce(p, num_bins);
    r.nll = nll_metric(p);
    return r;
}

namespace detail {

inline void require_scores(std::span<const double> in, std::span<const double> out) {
    if (in.empty() || out.empty()) {
        throw DomainError("OOD metric needs non-empty in- and out-of-distribution scores");
    }
}

}  // namespace detail

/// Mann-Whitney: P(in > out) + 0.5 P(in == out). In-distribution should score higher.
[[nodiscard]] inline double auroc(std::span<const double> in_scores, std::span<const double> out_scores) {
    detail::require_scores(in_scores, out_scores);
    std::vector<double> sorted_out(out_scores.begin(), out_scores.end());
    std::sort(sorted_out.begin(), sorted_out.end());
    // twice the Mann-Whitney count, kept integral so the result is one exact division
    std::uint64_t twice = 0;
    for (double s : in_scores) {
        const auto lo = std::lower_bound(sorted_out.begin(), sorted_out.end(), s);
        const auto hi = std::upper_bound(lo, sorted_out.end(), s);
        twice += 2 * static_cast<std::uint64_t>(lo - sorted_out.begin()) + static_cast<std::uint64_t>(hi - lo);
    }
    const double pairs = static_cast<double>(in_scores.size()) * static_cast<double>(out_scores.size());
    return static_cast<double>(twice) / 2.0 / pairs;
}

/// Fraction of out-scores >= t at the largest threshold t that keeps at
/// least 95% of in-scores >= t.
[[nodiscard]] inline double fpr95(std::span<const double> in_scores, std::span<const double> out_scores) {
    detail::require_scores(in_scores, out_scores);
    std::vector<double> in(in_scores.begin(), in_scores.end());
    std::sort(in.begin(), in.end(), std::greater<>());
    const std::size_t n = in.size();
    const std::size_t needed = (95 * n + 99) / 100;  // ceil(0.95 n)
    const double threshold = in[needed - 1];
    std::size_t fp = 0;
    for (double s : out_scores) {
        fp += s >= threshold ? 1 : 0;
    }
    return static_cast<double>(fp) / static_cast<double>(out_scores.size());
}

[[nodiscard]] inline OodScores ood_scores(std::span<const double> in_scores, std::span<const double> out_scores) {
    return OodScores{auroc(in_scores, out_scores), fpr95(in_scores, out_scores), in_scores.size(), out_scores.size()};
}

inline void reliability_csv(std::ostream &os, std::span<const ReliabilityBin> bins) {
    os << "bin_lo,bin_hi,count,avg_conf,avg_acc,gap\n";
    char buf[160];
    for (const auto &b : bins) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%zu,%.17g,%.17g,%.17g\n", b.lo, b.hi, b.count, b.avg_confidence,
                      b.avg_accuracy, b.gap());
        os << buf;
    }
}

}  // namespace maccal
