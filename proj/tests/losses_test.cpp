// SPDX-License-Identifier: Apache-2.0
#include <maccal/losses.hpp>

#include <gtest/gtest.h>

#include <cmath>

using namespace maccal;

namespace {

Matrix random_logits(std::size_t n, std::size_t k, RngStream &rng, double scale = 3.0) {
    Matrix m(n, k);
    for (double &v : m.values()) v = scale * rng.normal();
    return m;
}

// Central differences of the mean loss with respect to each logit.
Matrix numeric_logit_grad(const LossKind &kind, const Matrix &logits, const Targets &t, double h = 1e-5) {
    Matrix g(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        Matrix up = logits, dn = logits;
        up.values()[i] += h;
        dn.values()[i] -= h;
        g.values()[i] = (loss_value(kind, softmax_rows(up), t) - loss_value(kind, softmax_rows(dn), t)) / (2 * h);
    }
    return g;
}

}  // namespace

TEST(CrossEntropy, PerfectPredictionIsZero) {
    const std::vector<int> y{1, 0};
    EXPECT_EQ(cross_entropy(Matrix{{0, 1, 0}, {1, 0, 0}}, y), 0.0);
}

TEST(CrossEntropy, UniformPredictionIsLogK) {
    const std::vector<int> y{0, 3, 2};
    EXPECT_NEAR(cross_entropy(Matrix(3, 4, 0.25), y), std::log(4.0), 1e-15);
}

TEST(CrossEntropy, HandValue) {
    const std::vector<int> y{0};
    EXPECT_NEAR(cross_entropy(Matrix{{0.7, 0.3}}, y), -std::log(0.7), 1e-15);
    EXPECT_NEAR(cross_entropy(Matrix{{0.7, 0.3}}, y), 0.356675, 1e-6);
}

TEST(CrossEntropy, ZeroProbabilityIsFlooredAndReported) {
    const std::vector<int> y{1};
    LossDiagnostics diag;
    const double l = cross_entropy(Matrix{{1.0, 0.0}}, y, &diag);
    EXPECT_DOUBLE_EQ(l, -std::log(kLogFloor));
    EXPECT_EQ(diag.floored, 1u);
}

TEST(Focal, ZeroGammaEqualsCrossEntropy) {
    RngStream rng(3);
    const Matrix p = softmax_rows(random_logits(30, 5, rng));
    std::vector<int> y(30);
    for (auto &v : y) v = static_cast<int>(rng.below(5));
    EXPECT_EQ(focal_loss(p, y, 0.0), cross_entropy(p, y));
}

TEST(Focal, ConfidentCorrectIsZero) {
    const std::vector<int> y{0};
    for (double g : {0.5, 2.0, 5.0}) EXPECT_EQ(focal_loss(Matrix{{1.0, 0.0}}, y, g), 0.0);
}

TEST(Focal, HandValue) {
    const std::vector<int> y{0};
    EXPECT_NEAR(focal_loss(Matrix{{0.5, 0.5}}, y, 2.0), 0.25 * std::log(2.0), 1e-15);
    EXPECT_NEAR(focal_loss(Matrix{{0.5, 0.5}}, y, 2.0), 0.173287, 1e-6);
}

TEST(Focal, NegativeGammaRejected) {
    const std::vector<int> y{0};
    EXPECT_THROW((void)focal_loss(Matrix{{0.5, 0.5}}, y, -1.0), DomainError);
}

TEST(Focal, AdaptiveExponentSwitchesAtPointTwo) {
    const LossKind k = LossKind::focal_adaptive();
    const std::vector<int> y{0};
    const Targets t = Targets::hard(y);
    EXPECT_NEAR(loss_value(k, Matrix{{0.1, 0.9}}, t), -std::pow(0.9, 5.0) * std::log(0.1), 1e-15);
    EXPECT_NEAR(loss_value(k, Matrix{{0.3, 0.7}}, t), -std::pow(0.7, 3.0) * std::log(0.3), 1e-15);
}

TEST(LabelSmoothing, ZeroEpsilonIsOneHot) {
    const std::vector<int> y{2, 0};
    EXPECT_EQ(label_smooth_targets(y, 3, 0.0), (Matrix{{0, 0, 1}, {1, 0, 0}}));
}

TEST(LabelSmoothing, BinaryTargets) {
    const std::vector<int> y{0};
    const Matrix t = label_smooth_targets(y, 2, 0.1);
    EXPECT_DOUBLE_EQ(t(0, 0), 0.9);
    EXPECT_DOUBLE_EQ(t(0, 1), 0.1);
}

TEST(LabelSmoothing, LossMatchesSoftCrossEntropy) {
    RngStream rng(8);
    const Matrix p = softmax_rows(random_logits(20, 4, rng));
    std::vector<int> y(20);
    for (auto &v : y) v = static_cast<int>(rng.below(4));
    const double a = loss_value(LossKind::label_smoothing(0.2), p, Targets::hard(y));
    const double b = soft_cross_entropy(p, label_smooth_targets(y, 4, 0.2));
    EXPECT_NEAR(a, b, 1e-14);
    EXPECT_EQ(loss_value(LossKind::label_smoothing(0.0), p, Targets::hard(y)), cross_entropy(p, y));
}

TEST(LossGradient, MatchesFiniteDifferencesForEveryLoss) {
    RngStream rng(21);
    for (const LossKind &k : {LossKind::ce(), LossKind::focal(2.0), LossKind::focal(3.0), LossKind::focal_adaptive(),
                              LossKind::label_smoothing(0.1)}) {
        const Matrix logits = random_logits(6, 4, rng, 1.5);
        std::vector<int> y(6), y2(6);
        for (auto &v : y) v = static_cast<int>(rng.below(4));
        for (auto &v : y2) v = static_cast<int>(rng.below(4));
        Targets mixed{y, y2, {0.3, 1.0, 0.5, 0.9, 0.0, 0.71}};
        for (const Targets &t : {Targets::hard(y), mixed}) {
            const Matrix p = softmax_rows(logits);
            const Matrix g = loss_logit_grad(k, p, t);
            const Matrix fd = numeric_logit_grad(k, logits, t);
            for (std::size_t i = 0; i < g.size(); ++i) {
                EXPECT_NEAR(g.values()[i], fd.values()[i], 1e-7 + 1e-6 * std::abs(fd.values()[i])) << to_string(k.tag);
            }
        }
    }
}

TEST(LossGradient, MixupTargetsAreConvexCombination) {
    RngStream rng(4);
    const Matrix p = softmax_rows(random_logits(5, 3, rng));
    const std::vector<int> a{0, 1, 2, 0, 1}, b{2, 2, 0, 1, 0};
    const std::vector<double> lam{0.2, 0.4, 0.6, 0.8, 0.5};
    const double mixed = loss_value(LossKind::ce(), p, Targets{a, b, lam});
    double manual = 0;
    for (std::size_t i = 0; i < 5; ++i)
        manual += -lam[i] * std::log(p(i, a[i])) - (1 - lam[i]) * std::log(p(i, b[i]));
    EXPECT_NEAR(mixed, manual / 5, 1e-15);
}

TEST(Targets, MismatchedSizesThrow) {
    const std::vector<int> y{0};
    EXPECT_THROW((void)cross_entropy(Matrix(2, 2, 0.5), y), ShapeError);
}
