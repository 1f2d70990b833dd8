// SPDX-License-Identifier: Apache-2.0
//
// Temperature scaling fitted by validation NLL.

#pragma once

#include <maccal/metrics.hpp>
#include <maccal/numkernel.hpp>

#include <cmath>
#include <vector>

namespace maccal {

class Temperature {
  public:
    explicit Temperature(double t = 1.0) : value_(t) {
        if (!(t > 0.0) || !std::isfinite(t)) {
            throw DomainError("temperature must be positive and finite");
        }
    }
    [[nodiscard]] double value() const noexcept { return value_; }

  private:
    double value_;
};

struct TemperatureSearch {
    double lo = 0.05;
    double hi = 10.0;
    std::size_t grid_points = 120;
    double tolerance = 1e-4;
};

struct TemperatureFit {
    Temperature temperature;
    double nll = 0.0;          // validation NLL at the fitted temperature
    double nll_identity = 0.0;  // validation NLL at T = 1
    bool at_boundary = false;
};

[[nodiscard]] inline Matrix apply_temperature(const Matrix &logits, Temperature t) {
    return softmax_rows(scale(logits, 1.0 / t.value()));
}

/// Mean NLL of softmax(logits / T) against labels, without the log floor.
[[nodiscard]] inline double temperature_nll(const Matrix &logits, std::span<const int> labels, double t) {
    double total = 0.0;
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        const auto r = logits.row(i);
        const double mx = *std::max_element(r.begin(), r.end());
        double z = 0.0;
        for (double v : r) {
            z += std::exp((v - mx) / t);
        }
        total += std::log(z) - (r[static_cast<std::size_t>(labels[i])] - mx) / t;
    }
    return total / static_cast<double>(logits.rows());
}

/// Geometric grid over [lo, hi] followed by golden-section refinement
/// around the best grid point. T = 1 is always a candidate.
[[nodiscard]] inline TemperatureFit fit_temperature(const Matrix &val_logits, std::span<const int> val_labels,
                                                    const TemperatureSearch &search = {}) {
    if (val_logits.rows() == 0) {
        throw DomainError("fit_temperature: empty validation set");
    }
    if (val_labels.size() != val_logits.rows()) {
        throw ShapeError("fit_temperature: labels do not match logits");
    }
    auto nll = [&](double t) { return temperature_nll(val_logits, val_labels, t); };

    const std::size_t n = std::max<std::size_t>(search.grid_points, 3);
    const double ratio = std::pow(search.hi / search.lo, 1.0 / static_cast<double>(n - 1));
    std::vector<double> grid(n);
    std::vector<double> values(n);
    std::size_t best = 0;
    for (std::size_t i = 0; i < n; ++i) {
        grid[i] = i + 1 == n ? search.hi : search.lo * std::pow(ratio, static_cast<double>(i));
        values[i] = nll(grid[i]);
        if (values[i] < values[best]) {
            best = i;
        }
    }

    double a = grid[best == 0 ? 0 : best - 1];
    double b = grid[best + 1 == n ? n - 1 : best + 1];
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = b - inv_phi * (b - a);
    double d = a + inv_phi * (b - a);
    double fc = nll(c), fd = nll(d);
    while (b - a > search.tolerance) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = nll(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = nll(d);
        }
    }

    double t_best = grid[best];
    double f_best = values[best];
    const double mid = 0.5 * (a + b);
    if (const double fm = nll(mid); fm < f_best) {
        t_best = mid;
        f_best = fm;
    }
    const double f_one = nll(1.0);
    if (f_one <= f_best) {
        t_best = 1.0;
        f_best = f_one;
    }
    const double edge = search.tolerance;
    const bool boundary = t_best <= search.lo + edge || t_best >= search.hi - edge;
    return TemperatureFit{Temperature(t_best), f_best, f_one, boundary};
}

}  // namespace maccal
