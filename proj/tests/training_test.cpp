// SPDX-License-Identifier: Apache-2.0
#include <maccal/training.hpp>

#include <gtest/gtest.h>

#include <cmath>

using namespace maccal;

namespace {

TrainConfig small_config(Method m = Method::maccal) {
    TrainConfig c;
    c.method = m;
    c.hidden_widths = {32, 32};
    c.stage1_epochs = 8;
    c.stage2_epochs = 6;
    c.batch_size = 64;
    return c;
}

Dataset small_blobs(double spread = 0.42, std::uint64_t seed = 1) { return gen_blobs(BlobSpec{4, 10, 150, spread, seed}); }

std::uint64_t model_hash(const Model &m) {
    std::uint64_t h = m.extractor.parameter_hash();
    if (m.classifier) h = hash_values(m.classifier->weight.values(), h);
    if (m.head) h ^= m.head->parameter_hash();
    return h;
}

}  // namespace

TEST(ClipThreshold, EndpointsExactAndMidpointGeometric) {
    SparsityController c;
    c.total_epochs = 40;
    EXPECT_EQ(clip_threshold(0, c), 0.1);
    EXPECT_EQ(clip_threshold(40, c), 0.001);
    EXPECT_NEAR(clip_threshold(20, c), 0.01, 1e-12);
}

TEST(ClipThreshold, StrictlyDecreasing) {
    SparsityController c;
    for (std::size_t total : {1u, 2u, 7u, 40u, 101u}) {
        c.total_epochs = total;
        for (std::size_t t = 1; t <= total; ++t) EXPECT_LT(clip_threshold(t, c), clip_threshold(t - 1, c));
        EXPECT_EQ(clip_threshold(total, c), 0.001);
    }
}

TEST(UpdateSparsity, UnclippedStep) {
    SparsityController c{0.5, 0, 1.0, 0.1, 0.1, 40, ControllerMode::static_adaptive, 1.0};
    const auto u = update_sparsity(c, 0.9, 0.95);
    // 0.95 - 0.9 is 0.04999999999999993 in binary floating point
    EXPECT_NEAR(u.q, 0.55, 1e-15);
    EXPECT_EQ(u.eta, 0.1);
}

TEST(UpdateSparsity, ClippedStep) {
    SparsityController c{0.5, 0, 0.9, 0.05, 0.05, 40, ControllerMode::static_adaptive, 1.0};
    EXPECT_EQ(update_sparsity(c, 0.5, 0.99).q, 0.55);
}

TEST(UpdateSparsity, ZeroGapIsFixedPoint) {
    for (double g : {0.7, 0.9, 1.0}) {
        SparsityController c;
        c.gamma = g;
        const double acc = 0.8;
        EXPECT_EQ(update_sparsity(c, acc, g * acc).q, 0.5);
    }
}

TEST(UpdateSparsity, CalibratedTrajectoryKeepsInitialQ) {
    SparsityController c;
    c.gamma = 1.0;
    RngStream rng(3);
    for (int t = 0; t < 40; ++t) {
        const double a = rng.uniform();
        EXPECT_EQ(update_sparsity(c, a, a).q, 0.5);
    }
}

TEST(UpdateSparsity, StepBoundedAndQInRange) {
    RngStream rng(44);
    for (int i = 0; i < 10000; ++i) {
        const double q = rng.uniform(), acc = rng.uniform(), conf = rng.uniform();
        const double gamma = rng.uniform(0.5, 1.0), eta = rng.uniform(0.0, 0.2);
        const double next = sparsity_step(q, acc, conf, gamma, eta);
        ASSERT_LE(std::abs(next - q), eta + 1e-15);
        ASSERT_GE(next, 0.0);
        ASSERT_LE(next, 1.0);
    }
    EXPECT_EQ(sparsity_step(0.99, 0.0, 1.0, 1.0, 0.5), 1.0);
    EXPECT_EQ(sparsity_step(0.01, 1.0, 0.0, 1.0, 0.5), 0.0);
}

TEST(UpdateSparsity, SignFlagNegatesDirection) {
    EXPECT_NEAR(sparsity_step(0.5, 0.5, 0.6, 1.0, 0.1, -1.0), 0.4, 1e-15);
}

TEST(UpdateSparsity, FixedModeNeverMoves) {
    SparsityController c{0.3, 0, 0.9, 0.1, 0.001, 10, ControllerMode::fixed, 1.0};
    for (int i = 0; i < 10; ++i) EXPECT_EQ(update_sparsity(c, 0.1, 0.99).q, 0.3);
}

TEST(UpdateSparsity, DecayingModeUsesScheduleAfterIncrement) {
    SparsityController c{0.5, 0, 0.9, 0.1, 0.001, 4, ControllerMode::decaying_adaptive, 1.0};
    double prev = 0.5;
    for (std::size_t t = 1; t <= 4; ++t) {
        const auto u = update_sparsity(c, 0.0, 1.0);
        EXPECT_EQ(u.eta, clip_threshold(t, c));
        EXPECT_NEAR(u.q - prev, u.eta, 1e-15);
        prev = u.q;
    }
    EXPECT_EQ(c.t, 4u);
}

TEST(Stage1, LearningRateSteps) {
    TrainConfig c;
    c.stage1_epochs = 70;
    EXPECT_EQ(stage1_lr(c, 0), 0.1);
    EXPECT_EQ(stage1_lr(c, 29), 0.1);
    EXPECT_DOUBLE_EQ(stage1_lr(c, 30), 0.01);
    EXPECT_DOUBLE_EQ(stage1_lr(c, 50), 0.001);
    EXPECT_EQ(stage1_lr(c, 49), stage1_lr(c, 30));
}

TEST(Stage1, SeparableBlobsReachFullTrainAccuracy) {
    const Dataset d = gen_blobs(BlobSpec{3, 6, 100, 0.01, 2});
    TrainConfig c = small_config(Method::vanilla);
    c.stage1_epochs = 15;
    const auto run = train_baseline(d, c);
    EXPECT_EQ(run.history.back().acc, 1.0);
    EXPECT_EQ(evaluate_model(run.model, d, 15).accuracy, 1.0);
}

TEST(Stage1, BitIdenticalAcrossRuns) {
    const Dataset d = small_blobs();
    for (Method m : {Method::vanilla, Method::mixup, Method::flsd}) {
        const auto a = train_baseline(d, small_config(m));
        const auto b = train_baseline(d, small_config(m));
        EXPECT_EQ(model_hash(a.model), model_hash(b.model)) << to_string(m);
    }
}

TEST(Stage1, ZeroSmoothingIsVanilla) {
    const Dataset d = small_blobs();
    TrainConfig ls = small_config(Method::label_smoothing);
    ls.ls_epsilon = 0.0;
    EXPECT_EQ(model_hash(train_baseline(d, ls).model), model_hash(train_vanilla(d, small_config()).model));
}

TEST(Stage1, OverparameterizedNetIsOverconfident) {
    const Split s = split(gen_blobs(BlobSpec{5, 20, 400, 0.42, 3}), {0.5, 0.1}, 3);
    TrainConfig c;
    c.method = Method::vanilla;
    c.stage1_epochs = 60;
    const auto run = train_baseline(s.train, c);
    const auto test = evaluate_model(run.model, s.test, 15);
    const auto train = evaluate_model(run.model, s.train, 15);
    EXPECT_GT(train.avg_confidence, test.accuracy);
    EXPECT_GT(test.avg_confidence, test.accuracy);
    EXPECT_LT(test.accuracy, 1.0);
}

TEST(Stage1, FrozenExtractorRejected) {
    const Dataset d = small_blobs();
    const std::vector<std::size_t> widths{8};
    auto fe = FeatureExtractor::mlp(d.dim(), widths, RngStream(1));
    fe.freeze();
    LinearHead h{Matrix(8, d.num_classes)};
    EXPECT_THROW((void)stage1_train(fe, h, d, small_config()), StateError);
}

TEST(Transition, FreezesAndBuildsRequestedHead) {
    const std::vector<std::size_t> widths{12};
    TrainConfig c = small_config();
    auto fe = FeatureExtractor::mlp(5, widths, RngStream(1));
    c.head_kind = HeadKind::linear;
    auto lin = transition(fe, 3, c);
    EXPECT_TRUE(fe.frozen());
    EXPECT_EQ(lin.weights()[0]->rows(), 12u);
    EXPECT_EQ(lin.weights()[0]->cols(), 3u);
    c.head_kind = HeadKind::bottleneck;
    c.hidden = 7;
    auto bott = transition(fe, 3, c);
    EXPECT_EQ(bott.weights()[0]->cols(), 7u);
    EXPECT_EQ(bott.weights()[1]->rows(), 7u);
    EXPECT_EQ(bott.weights()[1]->cols(), 3u);
}

TEST(Transition, HeadDrawnFromItsOwnStream) {
    EXPECT_NE(streams::stage1_head_init, streams::stage2_head_init);
    const Dataset d = small_blobs();
    TrainConfig c = small_config();
    c.head_kind = HeadKind::linear;
    const auto s1 = train_baseline(d, c);
    RngStream r = RngStream(c.seed).derive(streams::stage1_head_init);
    const Matrix stage1_init = fan_in_uniform(32, d.num_classes, r);
    FeatureExtractor fe = s1.model.extractor;
    const auto head = transition(fe, d.num_classes, c);
    EXPECT_NE(*head.weights()[0], stage1_init);
    EXPECT_NE(*head.weights()[0], s1.model.classifier->weight);
}

TEST(Stage2, ExtractorHashUnchangedAndStatsLogged) {
    const Dataset d = small_blobs();
    const auto run = run_maccal(d, small_config());
    EXPECT_EQ(run.model.extractor.parameter_hash(), run.extractor_hash);
    EXPECT_EQ(run.stage1.extractor.parameter_hash(), run.extractor_hash);
    ASSERT_EQ(run.stats.size(), 6u);
    for (std::size_t i = 0; i < run.stats.size(); ++i) {
        EXPECT_EQ(run.stats[i].epoch, i + 1);
        if (i > 0) {
            EXPECT_EQ(run.stats[i].q, run.stats[i - 1].q_next);
        }
        EXPECT_LE(std::abs(run.stats[i].q_next - run.stats[i].q), run.stats[i].eta + 1e-15);
    }
    EXPECT_EQ(run.stats.front().q, 0.5);
    EXPECT_EQ(*run.model.final_q, run.stats.back().q_next);
}

TEST(Stage2, PinnedUnitRetentionMatchesUnmaskedRetraining) {
    const Dataset d = small_blobs();
    TrainConfig base = small_config();
    base.controller = ControllerMode::fixed;
    base.q0 = 1.0;
    const Model s1 = train_baseline(d, base).model;
    TrainConfig plain = base;
    plain.masking = false;
    const auto ref = run_stage2(s1, d, plain);
    for (MaskResample r : {MaskResample::epoch, MaskResample::batch}) {
        TrainConfig c = base;
        c.mask_resample = r;
        const auto run = run_stage2(s1, d, c);
        const auto a = run.model.head->weights(), b = ref.model.head->weights();
        for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i], *b[i]) << to_string(r);
    }
}

TEST(Stage2, FinalInferenceIsDeterministic) {
    const Dataset d = small_blobs();
    const auto run = run_maccal(d, small_config());
    EXPECT_EQ(run.model.predict_proba(d.features), run.model.predict_proba(d.features));
}

TEST(Stage2, EndToEndDeterministic) {
    const Dataset d = small_blobs();
    const auto a = run_maccal(d, small_config()), b = run_maccal(d, small_config());
    EXPECT_EQ(model_hash(a.model), model_hash(b.model));
    for (std::size_t i = 0; i < a.stats.size(); ++i) {
        EXPECT_EQ(a.stats[i].q_next, b.stats[i].q_next);
        EXPECT_EQ(a.stats[i].loss, b.stats[i].loss);
    }
}

TEST(Ablation, EveryRowConfiguresAndRuns) {
    const Dataset d = small_blobs();
    for (AblationRow row : kAblationLadder) {
        TrainConfig c = small_config();
        apply_ablation(c, row);
        EXPECT_NO_THROW(c.validate());
        const Model m = c.two_stage() ? run_maccal(d, c).model : train_baseline(d, c).model;
        EXPECT_GT(evaluate_model(m, d, 15).accuracy, 0.5) << to_string(row);
        if (c.two_stage()) {
            EXPECT_EQ(m.head->kind(), c.head_kind);
        }
    }
    TrainConfig c;
    apply_ablation(c, AblationRow::gradient_restriction);
    EXPECT_TRUE(c.gradient_restriction);
    EXPECT_EQ(c.head_kind, HeadKind::linear);
    EXPECT_EQ(c.controller, ControllerMode::fixed);
    apply_ablation(c, AblationRow::masked_retraining);
    EXPECT_FALSE(c.gradient_restriction);
    apply_ablation(c, AblationRow::classifier_restructure);
    EXPECT_EQ(c.head_kind, HeadKind::bottleneck);
    apply_ablation(c, AblationRow::static_adaptive_sparsity);
    EXPECT_EQ(c.controller, ControllerMode::static_adaptive);
}

TEST(Probe, ZeroRetentionGivesUniformConfidence) {
    const Dataset d = small_blobs();
    const Model m = train_baseline(d, small_config(Method::vanilla)).model;
    const auto p0 = masked_inference_probe(m, d, 0.0, 3, 1);
    EXPECT_EQ(p0.conf, 1.0 / static_cast<double>(d.num_classes));
    const auto p1 = masked_inference_probe(m, d, 1.0, 2, 1);
    EXPECT_EQ(p1.acc, evaluate_model(m, d, 15).accuracy);
    EXPECT_THROW((void)masked_inference_probe(m, d, 0.5, 0, 1), DomainError);

    // K = 5 over 4000 rows: a plain sum of 0.2 drifts off 1/K
    const Dataset big = gen_blobs(BlobSpec{5, 10, 800, 0.42, 3});
    TrainConfig c = small_config(Method::vanilla);
    c.stage1_epochs = 1;
    const Model mb = train_baseline(big, c).model;
    EXPECT_EQ(masked_inference_probe(mb, big, 0.0, 5, 2).conf, 0.2);
}

TEST(Config, ValidationRejectsBadValues) {
    TrainConfig c;
    c.q0 = 1.5;
    EXPECT_THROW(c.validate(), DomainError);
    c = TrainConfig{};
    c.batch_size = 0;
    EXPECT_THROW(c.validate(), DomainError);
    c = TrainConfig{};
    c.mixup_alpha = 0.0;
    c.method = Method::mixup;
    EXPECT_THROW(c.validate(), DomainError);
}
