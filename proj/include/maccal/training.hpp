// SPDX-License-Identifier: Apache-2.0
//
// Two-stage mask-based classifier calibration: stage-1 joint training,
// freezing transition, and stage-2 masked retraining of a fresh head under an
// adaptive retention probability. Single-stage baselines share the loop.

#pragma once

#include <maccal/datasets.hpp>
#include <maccal/losses.hpp>
#include <maccal/metrics.hpp>
#include <maccal/model.hpp>
#include <maccal/numkernel.hpp>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace maccal {

enum class Method { vanilla, label_smoothing, focal, flsd, mixup, maccal, mixup_maccal };
enum class MaskResample { epoch, batch };
enum class ControllerMode { fixed, static_adaptive, decaying_adaptive };

/// Rows of the component ablation ladder, each adding one piece to the previous.
enum class AblationRow {
    vanilla,
    masked_retraining,
    gradient_restriction,
    classifier_restructure,
    static_adaptive_sparsity,
    decaying_adaptive_sparsity,
};

struct TrainConfig {
    Method method = Method::maccal;
    std::uint64_t seed = 1;

    // stage 1
    std::vector<std::size_t> hidden_widths{256, 256};
    std::size_t stage1_epochs = 100;
    double stage1_learning_rate = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::size_t batch_size = 128;
    double focal_gamma = 3.0;
    double ls_epsilon = 0.05;
    double mixup_alpha = 1.0;

    // stage 2
    std::size_t stage2_epochs = 40;
    double learning_rate = 0.1;
    double stage2_momentum = 0.9;
    double stage2_weight_decay = 0.05;
    HeadKind head_kind = HeadKind::bottleneck;
    std::size_t hidden = 0;  // 0: max(2K, d/2)
    bool rectified_bottleneck = true;
    bool masking = true;
    MaskResample mask_resample = MaskResample::batch;
    MaskScope mask_scope = MaskScope::all;
    bool gradient_restriction = true;
    ControllerMode controller = ControllerMode::decaying_adaptive;
    double q0 = 0.5;
    double gamma = 0.9;
    double eta_init = 0.1;
    double eta_final = 0.001;
    double controller_sign = 1.0;
    bool measure_with_mask = false;

    std::size_t num_bins = kDefaultBins;

    [[nodiscard]] bool two_stage() const noexcept { return method == Method::maccal || method == Method::mixup_maccal; }
    [[nodiscard]] bool uses_mixup() const noexcept { return method == Method::mixup || method == Method::mixup_maccal; }

    [[nodiscard]] LossKind stage1_loss() const {
        switch (method) {
        case Method::label_smoothing: return LossKind::label_smoothing(ls_epsilon);
        case Method::focal: return LossKind::focal(focal_gamma);
        case Method::flsd: return LossKind::focal_adaptive();
        default: return LossKind::ce();
        }
    }

    void validate() const {
        auto fail = [](const std::string &m) { throw DomainError("config: " + m); };
        if (batch_size == 0) fail("batch_size must be positive");
        if (stage1_epochs == 0) fail("stage1_epochs must be positive");
        if (two_stage() && stage2_epochs == 0) fail("stage2_epochs must be positive");
        if (!(stage1_learning_rate > 0.0) || !(learning_rate > 0.0)) fail("learning rates must be positive");
        if (!(momentum >= 0.0 && momentum < 1.0) || !(stage2_momentum >= 0.0 && stage2_momentum < 1.0))
            fail("momentum must lie in [0, 1)");
        if (!(weight_decay >= 0.0) || !(stage2_weight_decay >= 0.0)) fail("weight decay must be non-negative");
        if (!(q0 >= 0.0 && q0 <= 1.0)) fail("q0 must lie in [0, 1]");
        if (!(gamma > 0.0 && gamma <= 1.0)) fail("gamma must lie in (0, 1]");
        if (!(eta_init > 0.0) || !(eta_final > 0.0)) fail("clip thresholds must be positive");
        if (controller_sign != 1.0 && controller_sign != -1.0) fail("controller_sign must be +1 or -1");
        if (uses_mixup() && !(mixup_alpha > 0.0)) fail("mixup alpha must be positive");
        if (num_bins == 0) fail("num_bins must be positive");
        stage1_loss().validate();
    }
};

[[nodiscard]] inline std::string to_string(Method m) {
    switch (m) {
    case Method::vanilla: return "vanilla";
    case Method::label_smoothing: return "ls";
    case Method::focal: return "focal";
    case Method::flsd: return "flsd-like";
    case Method::mixup: return "mixup";
    case Method::maccal: return "maccal";
    case Method::mixup_maccal: return "mixup+maccal";
    }
    return "?";
}

[[nodiscard]] inline std::string to_string(MaskResample r) { return r == MaskResample::epoch ? "epoch" : "batch"; }

[[nodiscard]] inline std::string to_string(ControllerMode m) {
    switch (m) {
    case ControllerMode::fixed: return "fixed";
    case ControllerMode::static_adaptive: return "static";
    case ControllerMode::decaying_adaptive: return "decaying";
    }
    return "?";
}

[[nodiscard]] inline std::string to_string(AblationRow r) {
    switch (r) {
    case AblationRow::vanilla: return "vanilla";
    case AblationRow::masked_retraining: return "masked-retraining";
    case AblationRow::gradient_restriction: return "gradient-restriction";
    case AblationRow::classifier_restructure: return "classifier-restructure";
    case AblationRow::static_adaptive_sparsity: return "static-adaptive";
    case AblationRow::decaying_adaptive_sparsity: return "decaying-adaptive";
    }
    return "?";
}

inline constexpr AblationRow kAblationLadder[] = {
    AblationRow::vanilla,
    AblationRow::masked_retraining,
    AblationRow::gradient_restriction,
    AblationRow::classifier_restructure,
    AblationRow::static_adaptive_sparsity,
    AblationRow::decaying_adaptive_sparsity,
};

/// Configures `cfg` as the given ladder row; the fixed-q rows use q0.
inline void apply_ablation(TrainConfig &cfg, AblationRow row) {
    const auto rank = static_cast<int>(row);
    if (row == AblationRow::vanilla) {
        cfg.method = Method::vanilla;
        return;
    }
    if (cfg.method != Method::mixup_maccal) {
        cfg.method = Method::maccal;
    }
    cfg.masking = true;
    cfg.gradient_restriction = rank >= static_cast<int>(AblationRow::gradient_restriction);
    cfg.head_kind = rank >= static_cast<int>(AblationRow::classifier_restructure) ? HeadKind::bottleneck : HeadKind::linear;
    cfg.controller = row == AblationRow::decaying_adaptive_sparsity ? ControllerMode::decaying_adaptive
                     : row == AblationRow::static_adaptive_sparsity ? ControllerMode::static_adaptive
                                                                    : ControllerMode::fixed;
}

struct SparsityController {
    double q = 0.5;
    std::size_t t = 0;
    double gamma = 0.9;
    double eta_init = 0.1;
    double eta_final = 0.001;
    std::size_t total_epochs = 40;
    ControllerMode mode = ControllerMode::decaying_adaptive;
    double sign = 1.0;

    static SparsityController from(const TrainConfig &cfg) {
        return SparsityController{cfg.q0, 0, cfg.gamma, cfg.eta_init, cfg.eta_final, cfg.stage2_epochs,
                                  cfg.controller, cfg.controller_sign};
    }
};

/// eta_t = eta_init * exp(log(eta_final / eta_init) * t / T); the endpoints
/// are returned exactly.
[[nodiscard]] inline double clip_threshold(std::size_t t, const SparsityController &ctrl) {
    if (t == 0 || ctrl.total_epochs == 0) {
        return ctrl.eta_init;
    }
    if (t >= ctrl.total_epochs) {
        return ctrl.eta_final;
    }
    const double frac = static_cast<double>(t) / static_cast<double>(ctrl.total_epochs);
    return ctrl.eta_init * std::exp(std::log(ctrl.eta_final / ctrl.eta_init) * frac);
}

/// q + clip(conf - gamma * acc, -eta, eta), clamped to [0, 1].
[[nodiscard]] inline double sparsity_step(double q, double acc, double conf, double gamma, double eta, double sign = 1.0) {
    const double delta = std::clamp(sign * (conf - gamma * acc), -eta, eta);
    return std::clamp(q + delta, 0.0, 1.0);
}

struct SparsityUpdate {
    double q = 0.0;
    double eta = 0.0;  // clip bound used; 0 in fixed mode
};

/// Advances the controller by one epoch using the epoch's accuracy and
/// average confidence.
inline SparsityUpdate update_sparsity(SparsityController &ctrl, double acc, double conf) {
    ctrl.t += 1;
    double eta = 0.0;
    switch (ctrl.mode) {
    case ControllerMode::fixed: return {ctrl.q, 0.0};
    case ControllerMode::static_adaptive: eta = ctrl.eta_init; break;
    case ControllerMode::decaying_adaptive: eta = clip_threshold(ctrl.t, ctrl); break;
    }
    ctrl.q = sparsity_step(ctrl.q, acc, conf, ctrl.gamma, eta, ctrl.sign);
    return {ctrl.q, eta};
}

struct EpochStats {
    std::size_t epoch = 0;
    double acc = 0.0;
    double conf = 0.0;
    double q = 0.0;       // retention used for this epoch's draws
    double q_next = 0.0;  // retention after the controller update
    double eta = 0.0;
    double loss = 0.0;
};

struct Stage1Epoch {
    std::size_t epoch = 0;
    double loss = 0.0;
    double acc = 0.0;
    double learning_rate = 0.0;
};

/// Stream ids under the run seed.
namespace streams {
inline constexpr std::uint64_t extractor_init = 11;
inline constexpr std::uint64_t stage1_head_init = 12;
inline constexpr std::uint64_t stage1_shuffle = 13;
inline constexpr std::uint64_t mixup = 14;
inline constexpr std::uint64_t stage2_head_init = 21;
inline constexpr std::uint64_t stage2_shuffle = 22;
inline constexpr std::uint64_t mask = 23;
inline constexpr std::uint64_t measure_mask = 24;
inline constexpr std::uint64_t probe_mask = 31;
}  // namespace streams

/// Stage-1 step decay: x0.1 after 3/7 and again after 5/7 of the epochs
/// (150 / 250 of 350 rescaled).
[[nodiscard]] inline double stage1_lr(const TrainConfig &cfg, std::size_t epoch) {
    const double frac = static_cast<double>(epoch) / static_cast<double>(cfg.stage1_epochs);
    double lr = cfg.stage1_learning_rate;
    if (frac >= 3.0 / 7.0) lr *= 0.1;
    if (frac >= 5.0 / 7.0) lr *= 0.1;
    return lr;
}

namespace detail {

inline Matrix gather_rows(const Matrix &m, std::span<const std::size_t> idx) {
    Matrix out(idx.size(), m.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        auto src = m.row(idx[r]);
        std::copy(src.begin(), src.end(), out.row(r).begin());
    }
    return out;
}

inline std::vector<int> gather_labels(std::span<const int> labels, std::span<const std::size_t> idx) {
    std::vector<int> out(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        out[r] = labels[idx[r]];
    }
    return out;
}

inline std::vector<std::size_t> shuffled_indices(std::size_t n, RngStream rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) {
        idx[i] = i;
    }
    rng.shuffle(idx);
    return idx;
}

inline void require_finite_loss(double loss, const char *stage, std::size_t epoch) {
    if (!std::isfinite(loss)) {
        throw DivergenceError(std::string(stage) + ": non-finite loss at epoch " + std::to_string(epoch));
    }
}

inline std::size_t count_correct(const Matrix &probs, std::span<const int> labels) {
    const auto pred = argmax_row(probs);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        hits += static_cast<int>(pred[i]) == labels[i] ? 1 : 0;
    }
    return hits;
}

}  // namespace detail

/// Mini-batch SGD of extractor and linear classifier jointly on the
/// configured stage-1 loss, with per-row mixup when enabled.
inline std::vector<Stage1Epoch> stage1_train(FeatureExtractor &fe, LinearHead &head, const Dataset &train,
                                             const TrainConfig &cfg) {
    cfg.validate();
    if (fe.frozen()) {
        throw StateError("stage1_train: extractor is frozen");
    }
    if (train.size() == 0) {
        throw DomainError("stage1_train: empty training set");
    }
    const RngStream root(cfg.seed);
    const LossKind loss = cfg.stage1_loss();
    SgdState fe_opt{cfg.momentum, cfg.weight_decay, {}};
    SgdState head_opt{cfg.momentum, cfg.weight_decay, {}};
    std::vector<Stage1Epoch> history;

    for (std::size_t epoch = 0; epoch < cfg.stage1_epochs; ++epoch) {
        const double lr = stage1_lr(cfg, epoch);
        const auto order = detail::shuffled_indices(train.size(), root.derive(streams::stage1_shuffle).derive(epoch));
        RngStream mix_rng = root.derive(streams::mixup).derive(epoch);
        double loss_sum = 0.0;
        std::size_t hits = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::span<const std::size_t> idx =
                std::span<const std::size_t>(order).subspan(start, std::min(cfg.batch_size, order.size() - start));
            Matrix x = detail::gather_rows(train.features, idx);
            std::vector<int> y = detail::gather_labels(train.labels, idx);
            Targets targets = Targets::hard(y);
            if (cfg.uses_mixup()) {
                std::vector<std::size_t> partner(idx.size());
                for (std::size_t i = 0; i < partner.size(); ++i) {
                    partner[i] = i;
                }
                mix_rng.shuffle(partner);
                Matrix xb = detail::gather_rows(x, partner);
                std::vector<int> yb = detail::gather_labels(y, partner);
                auto mb = mixup_batch(x, y, xb, yb, cfg.mixup_alpha, mix_rng);
                x = std::move(mb.mixed_features);
                targets = Targets::from_mixup(mb);
            }
            const auto cache = fe.forward_cached(x);
            const Matrix logits = matmul(cache.output, head.weight);
            const Matrix probs = softmax_rows(logits);
            const double batch_loss = loss_value(loss, probs, targets);
            detail::require_finite_loss(batch_loss, "stage 1", epoch);
            loss_sum += batch_loss * static_cast<double>(idx.size());
            hits += detail::count_correct(probs, y);

            const Matrix g_logits = loss_logit_grad(loss, probs, targets);
            const Matrix g_head = matmul_tn(cache.output, g_logits);
            const Matrix g_z = matmul_nt(g_logits, head.weight);
            const auto g_fe = fe.backward(cache, g_z);

            sgd_step(head.weight, g_head, lr, head_opt, 0);
            auto &layers = fe.mutable_layers();
            for (std::size_t li = 0; li < layers.size(); ++li) {
                sgd_step(layers[li].weight, g_fe[li].weight, lr, fe_opt, 2 * li);
                sgd_step(layers[li].bias, g_fe[li].bias, lr, fe_opt, 2 * li + 1);
            }
        }
        history.push_back(Stage1Epoch{epoch + 1, loss_sum / static_cast<double>(train.size()),
                                      static_cast<double>(hits) / static_cast<double>(train.size()), lr});
    }
    return history;
}

/// Features of a dataset under a frozen extractor, computed once for stage 2.
struct FrozenFeatures {
    Matrix z;
    std::vector<int> labels;
    std::size_t num_classes = 0;

    static FrozenFeatures compute(const FeatureExtractor &fe, const Dataset &data) {
        if (!fe.frozen()) {
            throw StateError("frozen features require a frozen extractor");
        }
        return FrozenFeatures{fe.forward(data.features), data.labels, data.num_classes};
    }
};

/// Freezes the extractor and builds a freshly initialised head on its own stream.
[[nodiscard]] inline MaskedHead transition(FeatureExtractor &fe, std::size_t num_classes, const TrainConfig &cfg) {
    fe.freeze();
    const HeadSpec spec{cfg.head_kind, cfg.hidden, cfg.rectified_bottleneck};
    return reinit_head(fe.output_dim(), num_classes, spec, RngStream(cfg.seed).derive(streams::stage2_head_init));
}

/// Training-set accuracy and mean confidence of the head; all-ones masks
/// unless `with_mask` is set, in which case one fresh mask draw is used.
struct AccConf {
    double acc = 0.0;
    double conf = 0.0;
};

[[nodiscard]] inline AccConf measure_acc_conf(const MaskedHead &mh, const FrozenFeatures &data, bool with_mask,
                                              double q, MaskScope scope, RngStream rng) {
    Matrix logits;
    if (with_mask) {
        MaskedHead draw = mh;
        resample_masks(draw, q, scope, rng);
        logits = masked_logits(draw, data.z);
    } else {
        logits = unmasked_logits(mh, data.z);
    }
    const PredictionSet p(softmax_rows(logits), data.labels);
    return {accuracy(p), avg_confidence(p)};
}

/// One epoch of masked retraining followed by the retention update.
inline EpochStats stage2_epoch(MaskedHead &mh, SparsityController &ctrl, const FrozenFeatures &data, const TrainConfig &cfg,
                               SgdState &opt) {
    if (data.z.rows() == 0) {
        throw DomainError("stage2_epoch: empty training set");
    }
    const RngStream root(cfg.seed);
    const std::size_t epoch = ctrl.t + 1;
    const double q = cfg.masking ? ctrl.q : 1.0;
    const RngStream epoch_masks = root.derive(streams::mask).derive(epoch);
    const auto order = detail::shuffled_indices(data.z.rows(), root.derive(streams::stage2_shuffle).derive(epoch));
    const bool restrict_grad = cfg.gradient_restriction;

    mh.reset_masks();
    if (cfg.masking && cfg.mask_resample == MaskResample::epoch) {
        RngStream r = epoch_masks;
        resample_masks(mh, q, cfg.mask_scope, r);
    }
    double loss_sum = 0.0;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_no) {
        const std::span<const std::size_t> idx =
            std::span<const std::size_t>(order).subspan(start, std::min(cfg.batch_size, order.size() - start));
        if (cfg.masking && cfg.mask_resample == MaskResample::batch) {
            RngStream r = epoch_masks.derive(batch_no);
            resample_masks(mh, q, cfg.mask_scope, r);
        }
        const Matrix z = detail::gather_rows(data.z, idx);
        const std::vector<int> y = detail::gather_labels(data.labels, idx);
        const Targets targets = Targets::hard(y);
        const Matrix probs = softmax_rows(masked_logits(mh, z));
        const double batch_loss = loss_value(LossKind::ce(), probs, targets);
        detail::require_finite_loss(batch_loss, "stage 2", epoch);
        loss_sum += batch_loss * static_cast<double>(idx.size());
        const Matrix g_logits = loss_logit_grad(LossKind::ce(), probs, targets);
        const auto grads = masked_backward_logits(mh, z, g_logits, restrict_grad);
        apply_update(mh, grads, cfg.learning_rate, opt, restrict_grad);
    }
    mh.reset_masks();
    mh.q = q;

    const AccConf m = measure_acc_conf(mh, data, cfg.measure_with_mask, q, cfg.mask_scope,
                                       root.derive(streams::measure_mask).derive(epoch));
    EpochStats s;
    s.epoch = epoch;
    s.acc = m.acc;
    s.conf = m.conf;
    s.q = q;
    s.loss = loss_sum / static_cast<double>(data.z.rows());
    const auto upd = update_sparsity(ctrl, m.acc, m.conf);
    s.q_next = cfg.masking ? upd.q : 1.0;
    s.eta = upd.eta;
    return s;
}

/// Trained network: extractor plus either the stage-1 linear classifier or
/// the stage-2 head. Inference always uses the unmasked head.
struct Model {
    FeatureExtractor extractor;
    std::optional<LinearHead> classifier;
    std::optional<MaskedHead> head;
    std::optional<double> final_q;

    [[nodiscard]] std::size_t num_classes() const {
        if (head) return head->num_classes();
        if (classifier) return classifier->weight.cols();
        throw StateError("model has no classifier");
    }

    [[nodiscard]] Matrix logits_from_features(const Matrix &z) const {
        if (head) return unmasked_logits(*head, z);
        if (classifier) return matmul(z, classifier->weight);
        throw StateError("model has no classifier");
    }

    [[nodiscard]] Matrix logits(const Matrix &x) const { return logits_from_features(extractor.forward(x)); }
    [[nodiscard]] Matrix predict_proba(const Matrix &x) const { return softmax_rows(logits(x)); }

    /// The head as a maskable classifier (the stage-1 classifier is wrapped as a linear head).
    [[nodiscard]] MaskedHead maskable_head() const {
        if (head) return *head;
        if (!classifier) throw StateError("model has no classifier");
        MaskedHead mh;
        mh.head = *classifier;
        mh.reset_masks();
        return mh;
    }
};

[[nodiscard]] inline CalibrationReport evaluate_model(const Model &m, const Dataset &data, std::size_t num_bins) {
    return evaluate(PredictionSet(m.predict_proba(data.features), data.labels), num_bins);
}

/// Single-stage training with the configured loss (and mixup when enabled).
struct BaselineRun {
    Model model;
    std::vector<Stage1Epoch> history;
};

[[nodiscard]] inline BaselineRun train_baseline(const Dataset &train, const TrainConfig &cfg) {
    cfg.validate();
    const RngStream root(cfg.seed);
    BaselineRun run;
    run.model.extractor = FeatureExtractor::mlp(train.dim(), cfg.hidden_widths, root.derive(streams::extractor_init));
    RngStream head_rng = root.derive(streams::stage1_head_init);
    LinearHead head{fan_in_uniform(run.model.extractor.output_dim(), train.num_classes, head_rng)};
    run.history = stage1_train(run.model.extractor, head, train, cfg);
    run.model.classifier = std::move(head);
    return run;
}

[[nodiscard]] inline BaselineRun train_vanilla(const Dataset &train, TrainConfig cfg) {
    cfg.method = Method::vanilla;
    return train_baseline(train, cfg);
}

struct MacCalRun {
    Model stage1;  // extractor and classifier after stage 1
    Model model;   // frozen extractor with the retrained head
    std::vector<Stage1Epoch> stage1_history;
    std::vector<EpochStats> stats;
    std::uint64_t extractor_hash = 0;
};

/// Stage 2 on top of an already trained stage-1 model. The extractor hash is
/// re-checked after every epoch.
[[nodiscard]] inline MacCalRun run_stage2(const Model &stage1, const Dataset &train, const TrainConfig &cfg) {
    cfg.validate();
    MacCalRun run;
    run.stage1 = stage1;
    run.model.extractor = stage1.extractor;
    MaskedHead mh = transition(run.model.extractor, train.num_classes, cfg);
    run.extractor_hash = run.model.extractor.parameter_hash();
    const FrozenFeatures feats = FrozenFeatures::compute(run.model.extractor, train);
    SparsityController ctrl = SparsityController::from(cfg);
    SgdState opt{cfg.stage2_momentum, cfg.stage2_weight_decay, {}};
    for (std::size_t e = 0; e < cfg.stage2_epochs; ++e) {
        run.stats.push_back(stage2_epoch(mh, ctrl, feats, cfg, opt));
        if (run.model.extractor.parameter_hash() != run.extractor_hash) {
            throw StateError("frozen extractor changed during stage 2");
        }
    }
    run.model.final_q = run.stats.empty() ? cfg.q0 : run.stats.back().q_next;
    mh.reset_masks();
    run.model.head = std::move(mh);
    return run;
}

[[nodiscard]] inline MacCalRun run_maccal(const Dataset &train, const TrainConfig &cfg) {
    cfg.validate();
    BaselineRun s1 = train_baseline(train, cfg);
    MacCalRun run = run_stage2(s1.model, train, cfg);
    run.stage1_history = std::move(s1.history);
    return run;
}

struct ProbePoint {
    double q = 1.0;
    double acc = 0.0;
    double conf = 0.0;
};

/// Accuracy and confidence of the model's head evaluated under random
/// Bernoulli(q) weight masks, averaged over `draws` mask draws.
[[nodiscard]] inline ProbePoint masked_inference_probe(const Model &m, const Dataset &data, double q, std::size_t draws,
                                                       std::uint64_t seed, MaskScope scope = MaskScope::all) {
    if (draws == 0) {
        throw DomainError("probe needs at least one draw");
    }
    const Matrix z = m.extractor.forward(data.features);
    MaskedHead mh = m.maskable_head();
    const RngStream root = RngStream(seed).derive(streams::probe_mask);
    // Running means return a constant input unchanged, so at q = 0 the
    // confidence is exactly 1/K rather than 1/K up to summation error.
    auto running = [](double &m, double x, std::size_t i) { m += (x - m) / static_cast<double>(i + 1); };
    ProbePoint pt{q, 0.0, 0.0};
    for (std::size_t d = 0; d < draws; ++d) {
        RngStream r = root.derive(d);
        resample_masks(mh, q, scope, r);
        const PredictionSet p(softmax_rows(masked_logits(mh, z)), data.labels);
        double conf = 0.0;
        const auto c = p.confidences();
        for (std::size_t i = 0; i < c.size(); ++i) {
            running(conf, c[i], i);
        }
        running(pt.acc, accuracy(p), d);
        running(pt.conf, conf, d);
    }
    return pt;
}

}  // namespace maccal
