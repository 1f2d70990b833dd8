// SPDX-License-Identifier: Apache-2.0
//
// MLP feature extractor and the (masked) classifier heads with hand-written
// forward and backward passes.

#pragma once

#include <maccal/numkernel.hpp>

#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace maccal {

struct DenseLayer {
    Matrix weight;  // in x out
    Matrix bias;    // 1 x out
};

struct DenseGradient {
    Matrix weight;
    Matrix bias;
};

/// Stack of rectified dense layers. With no layers it is the identity map.
class FeatureExtractor {
  public:
    FeatureExtractor() = default;
    explicit FeatureExtractor(std::size_t input_dim) : input_dim_(input_dim) {}
    FeatureExtractor(std::size_t input_dim, std::vector<DenseLayer> layers) : input_dim_(input_dim), layers_(std::move(layers)) {
        std::size_t in = input_dim_;
        for (const auto &l : layers_) {
            if (l.weight.rows() != in || l.bias.rows() != 1 || l.bias.cols() != l.weight.cols()) {
                throw ShapeError("feature extractor: inconsistent layer shapes");
            }
            in = l.weight.cols();
        }
    }

    /// He-uniform weights, zero biases.
    static FeatureExtractor mlp(std::size_t input_dim, std::span<const std::size_t> widths, RngStream rng) {
        std::vector<DenseLayer> layers;
        std::size_t in = input_dim;
        for (std::size_t w : widths) {
            const double bound = std::sqrt(6.0 / static_cast<double>(in));
            DenseLayer l{Matrix(in, w), Matrix(1, w)};
            for (double &v : l.weight.values()) {
                v = rng.uniform(-bound, bound);
            }
            layers.push_back(std::move(l));
            in = w;
        }
        return FeatureExtractor(input_dim, std::move(layers));
    }

    [[nodiscard]] std::size_t input_dim() const noexcept { return input_dim_; }
    [[nodiscard]] std::size_t output_dim() const noexcept {
        return layers_.empty() ? input_dim_ : layers_.back().weight.cols();
    }
    [[nodiscard]] std::size_t depth() const noexcept { return layers_.size(); }
    [[nodiscard]] const std::vector<DenseLayer> &layers() const noexcept { return layers_; }
    [[nodiscard]] bool frozen() const noexcept { return frozen_; }
    void freeze() noexcept { frozen_ = true; }

    /// Mutable parameter access; refused once frozen.
    [[nodiscard]] std::vector<DenseLayer> &mutable_layers() {
        if (frozen_) {
            throw StateError("feature extractor is frozen");
        }
        return layers_;
    }

    [[nodiscard]] Matrix forward(const Matrix &x) const {
        check_input(x);
        Matrix h = x;
        for (const auto &l : layers_) {
            h = relu(add_bias(matmul(h, l.weight), l.bias));
        }
        return h;
    }

    /// Forward pass keeping every layer input and pre-activation for backward.
    struct Cache {
        std::vector<Matrix> inputs;
        std::vector<Matrix> pre;
        Matrix output;
    };

    [[nodiscard]] Cache forward_cached(const Matrix &x) const {
        check_input(x);
        Cache c;
        Matrix h = x;
        for (const auto &l : layers_) {
            c.inputs.push_back(h);
            Matrix pre = add_bias(matmul(h, l.weight), l.bias);
            h = relu(pre);
            c.pre.push_back(std::move(pre));
        }
        c.output = std::move(h);
        return c;
    }

    /// Parameter gradients given d loss / d output.
    [[nodiscard]] std::vector<DenseGradient> backward(const Cache &c, Matrix grad_out) const {
        std::vector<DenseGradient> grads(layers_.size());
        for (std::size_t li = layers_.size(); li-- > 0;) {
            Matrix g = hadamard(grad_out, relu_grad(c.pre[li]));
            grads[li].weight = matmul_tn(c.inputs[li], g);
            grads[li].bias = Matrix(1, g.cols());
            for (std::size_t i = 0; i < g.rows(); ++i) {
                for (std::size_t j = 0; j < g.cols(); ++j) {
                    grads[li].bias(0, j) += g(i, j);
                }
            }
            if (li > 0) {
                grad_out = matmul_nt(g, layers_[li].weight);
            }
        }
        return grads;
    }

    [[nodiscard]] std::uint64_t parameter_hash() const {
        std::uint64_t h = hash_string("extractor");
        for (const auto &l : layers_) {
            h = hash_values(l.weight.values(), h);
            h = hash_values(l.bias.values(), h);
        }
        return h;
    }

  private:
    void check_input(const Matrix &x) const {
        if (x.cols() != input_dim_) {
            throw ShapeError("feature extractor expects " + std::to_string(input_dim_) + " columns, got " +
                             std::to_string(x.cols()));
        }
    }

    std::size_t input_dim_ = 0;
    std::vector<DenseLayer> layers_;
    bool frozen_ = false;
};

/// logits = z W, no bias.
struct LinearHead {
    Matrix weight;  // d x K
};

/// logits = act(z W1) W2 with act = relu when rectified, identity otherwise.
struct BottleneckHead {
    Matrix w1;  // d x h
    Matrix w2;  // h x K
    bool rectified = true;
};

enum class HeadKind { linear, bottleneck };
enum class MaskScope { all, final_only };

[[nodiscard]] inline std::string to_string(HeadKind k) { return k == HeadKind::linear ? "linear" : "bottleneck"; }
[[nodiscard]] inline std::string to_string(MaskScope s) { return s == MaskScope::all ? "all" : "final-only"; }

/// Restructured classifier with one binary mask per weight matrix.
struct MaskedHead {
    std::variant<LinearHead, BottleneckHead> head;
    std::vector<Matrix> masks;
    std::optional<double> q;

    [[nodiscard]] HeadKind kind() const noexcept {
        return std::holds_alternative<LinearHead>(head) ? HeadKind::linear : HeadKind::bottleneck;
    }

    [[nodiscard]] std::vector<Matrix *> weights() {
        if (auto *l = std::get_if<LinearHead>(&head)) {
            return {&l->weight};
        }
        auto &b = std::get<BottleneckHead>(head);
        return {&b.w1, &b.w2};
    }
    [[nodiscard]] std::vector<const Matrix *> weights() const {
        if (const auto *l = std::get_if<LinearHead>(&head)) {
            return {&l->weight};
        }
        const auto &b = std::get<BottleneckHead>(head);
        return {&b.w1, &b.w2};
    }

    [[nodiscard]] std::size_t input_dim() const { return weights().front()->rows(); }
    [[nodiscard]] std::size_t num_classes() const { return weights().back()->cols(); }

    void reset_masks() {
        masks.clear();
        for (const Matrix *w : weights()) {
            masks.push_back(Matrix::ones(w->rows(), w->cols()));
        }
    }

    void check_masks() const {
        const auto ws = weights();
        if (masks.size() != ws.size()) {
            throw StateError("masked head: masks not set");
        }
        for (std::size_t i = 0; i < ws.size(); ++i) {
            if (!masks[i].same_shape(*ws[i])) {
                throw StateError("masked head: mask " + std::to_string(i) + " has shape " + shape_string(masks[i]) +
                                 ", weight has " + shape_string(*ws[i]));
            }
        }
    }

    [[nodiscard]] std::uint64_t parameter_hash() const {
        std::uint64_t h = hash_string("head");
        for (const Matrix *w : weights()) {
            h = hash_values(w->values(), h);
        }
        return h;
    }
};

/// Draws fresh i.i.d. Bernoulli(q) masks. With MaskScope::final_only only the
/// last weight matrix is masked and earlier masks are all ones.
inline void resample_masks(MaskedHead &mh, double q, MaskScope scope, RngStream &rng) {
    const auto ws = mh.weights();
    mh.masks.clear();
    for (std::size_t i = 0; i < ws.size(); ++i) {
        const bool masked = scope == MaskScope::all || i + 1 == ws.size();
        mh.masks.push_back(masked ? bernoulli_matrix(ws[i]->rows(), ws[i]->cols(), q, rng)
                                  : Matrix::ones(ws[i]->rows(), ws[i]->cols()));
    }
    mh.q = q;
}

struct HeadSpec {
    HeadKind kind = HeadKind::bottleneck;
    std::size_t hidden = 0;  // 0 selects max(2K, d/2)
    bool rectified = true;
};

[[nodiscard]] inline std::size_t default_hidden(std::size_t d, std::size_t num_classes) {
    return std::max(2 * num_classes, d / 2);
}

/// Symmetric fan-in-scaled uniform init U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
[[nodiscard]] inline Matrix fan_in_uniform(std::size_t rows, std::size_t cols, RngStream &rng) {
    Matrix w(rows, cols);
    const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
    for (double &v : w.values()) {
        v = rng.uniform(-bound, bound);
    }
    return w;
}

[[nodiscard]] inline MaskedHead reinit_head(std::size_t d, std::size_t num_classes, const HeadSpec &spec, RngStream rng) {
    if (d == 0 || num_classes < 2) {
        throw DomainError("reinit_head: need d >= 1 and K >= 2");
    }
    MaskedHead mh;
    if (spec.kind == HeadKind::linear) {
        mh.head = LinearHead{fan_in_uniform(d, num_classes, rng)};
    } else {
        const std::size_t h = spec.hidden == 0 ? default_hidden(d, num_classes) : spec.hidden;
        if (h < num_classes) {
            throw DomainError("reinit_head: bottleneck width must be >= K");
        }
        Matrix w1 = fan_in_uniform(d, h, rng);
        Matrix w2 = fan_in_uniform(h, num_classes, rng);
        mh.head = BottleneckHead{std::move(w1), std::move(w2), spec.rectified};
    }
    mh.reset_masks();
    return mh;
}

/// Intermediate values of one head forward pass.
struct HeadForward {
    Matrix hidden_pre;  // bottleneck only
    Matrix hidden;      // bottleneck only
    Matrix logits;
};

namespace detail {

inline HeadForward head_forward(const MaskedHead &mh, const Matrix &z, bool apply_masks) {
    if (apply_masks) {
        mh.check_masks();
    }
    const auto ws = mh.weights();
    if (z.cols() != ws.front()->rows()) {
        throw ShapeError("head expects " + std::to_string(ws.front()->rows()) + " features, got " + std::to_string(z.cols()));
    }
    auto eff = [&](std::size_t i) { return apply_masks ? hadamard(mh.masks[i], *ws[i]) : *ws[i]; };
    HeadForward f;
    if (mh.kind() == HeadKind::linear) {
        f.logits = matmul(z, eff(0));
        return f;
    }
    const bool rect = std::get<BottleneckHead>(mh.head).rectified;
    f.hidden_pre = matmul(z, eff(0));
    f.hidden = rect ? relu(f.hidden_pre) : f.hidden_pre;
    f.logits = matmul(f.hidden, eff(1));
    return f;
}

}  // namespace detail

/// Logits with the current masks applied elementwise to each weight matrix.
[[nodiscard]] inline Matrix masked_logits(const MaskedHead &mh, const Matrix &z) {
    return detail::head_forward(mh, z, true).logits;
}

/// Logits of the full (all-ones mask) head, used for deterministic inference.
[[nodiscard]] inline Matrix unmasked_logits(const MaskedHead &mh, const Matrix &z) {
    return detail::head_forward(mh, z, false).logits;
}

struct HeadGradients {
    std::vector<Matrix> grads;  // one per weight matrix
};

/// Gradients of the batch loss given d loss / d logits.
///
/// With `restrict_to_mask` each gradient is M (.) dL/d(M (.) W), which is the
/// exact derivative of the masked loss with respect to W. Without it the
/// gradient of the effective weight is applied to every coordinate
/// (straight-through), so dropped weights still move.
[[nodiscard]] inline HeadGradients masked_backward_logits(const MaskedHead &mh, const Matrix &z, const Matrix &grad_logits,
                                                          bool restrict_to_mask = true) {
    mh.check_masks();
    const auto f = detail::head_forward(mh, z, true);
    if (!grad_logits.same_shape(f.logits)) {
        throw ShapeError("masked_backward: gradient " + shape_string(grad_logits) + " vs logits " + shape_string(f.logits));
    }
    HeadGradients out;
    auto finish = [&](Matrix g, std::size_t i) { return restrict_to_mask ? hadamard(mh.masks[i], g) : g; };
    if (mh.kind() == HeadKind::linear) {
        out.grads.push_back(finish(matmul_tn(z, grad_logits), 0));
        return out;
    }
    const auto &b = std::get<BottleneckHead>(mh.head);
    const Matrix eff2 = hadamard(mh.masks[1], b.w2);
    Matrix g_eff2 = matmul_tn(f.hidden, grad_logits);
    Matrix g_hidden = matmul_nt(grad_logits, eff2);
    if (b.rectified) {
        g_hidden = hadamard(g_hidden, relu_grad(f.hidden_pre));
    }
    Matrix g_eff1 = matmul_tn(z, g_hidden);
    out.grads.push_back(finish(std::move(g_eff1), 0));
    out.grads.push_back(finish(std::move(g_eff2), 1));
    return out;
}

/// Cross-entropy gradients: d loss / d logits = (probs - targets) / batch.
[[nodiscard]] inline HeadGradients masked_backward(const MaskedHead &mh, const Matrix &z, const Matrix &probs,
                                                   const Matrix &targets, bool restrict_to_mask = true) {
    detail::require_same_shape(probs, targets, "masked_backward");
    if (probs.rows() != z.rows()) {
        throw ShapeError("masked_backward: probs rows do not match features");
    }
    Matrix g = sub(probs, targets);
    const double inv_n = probs.rows() == 0 ? 0.0 : 1.0 / static_cast<double>(probs.rows());
    for (double &v : g.values()) {
        v *= inv_n;
    }
    return masked_backward_logits(mh, z, g, restrict_to_mask);
}

/// Momentum buffers for SGD, one per parameter matrix.
struct SgdState {
    double momentum = 0.0;
    double weight_decay = 0.0;
    std::vector<Matrix> velocity;
};

/// In-place SGD update: v = mu v + (g + wd w); w -= lr v. Coordinates where
/// `freeze` is zero are skipped entirely, velocity included.
inline void sgd_step(Matrix &w, const Matrix &g, double lr, SgdState &state, std::size_t slot, const Matrix *freeze = nullptr) {
    detail::require_same_shape(w, g, "sgd_step");
    if (state.velocity.size() <= slot) {
        state.velocity.resize(slot + 1);
    }
    Matrix &v = state.velocity[slot];
    if (!v.same_shape(w)) {
        v = Matrix(w.rows(), w.cols());
    }
    auto wv = w.values();
    auto gv = g.values();
    auto vv = v.values();
    for (std::size_t i = 0; i < wv.size(); ++i) {
        if (freeze != nullptr && freeze->values()[i] == 0.0) {
            continue;
        }
        const double step = gv[i] + state.weight_decay * wv[i];
        vv[i] = state.momentum * vv[i] + step;
        wv[i] -= lr * vv[i];
    }
}

/// Head update. With `restrict_to_mask` masked coordinates are left untouched
/// (weights and momentum), matching the zeroed gradient.
inline void apply_update(MaskedHead &mh, const HeadGradients &grads, double lr, SgdState &state, bool restrict_to_mask = true) {
    if (!(lr >= 0.0)) {
        throw DomainError("apply_update: learning rate must be non-negative");
    }
    auto ws = mh.weights();
    if (grads.grads.size() != ws.size()) {
        throw ShapeError("apply_update: gradient count does not match head");
    }
    if (restrict_to_mask) {
        mh.check_masks();
    }
    for (std::size_t i = 0; i < ws.size(); ++i) {
        sgd_step(*ws[i], grads.grads[i], lr, state, i, restrict_to_mask ? &mh.masks[i] : nullptr);
    }
}

/// Plain SGD step without momentum.
inline void apply_update(MaskedHead &mh, const HeadGradients &grads, double lr) {
    SgdState plain;
    apply_update(mh, grads, lr, plain, true);
}

}  // namespace maccal
