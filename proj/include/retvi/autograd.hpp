#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "retvi/tensor.hpp"

namespace retvi {

// Reverse-mode autodiff over Tensor. A Var is a handle to a graph node;
// leaves with requires_grad accumulate gradients across backward() calls
// until zero_grad(). All math runs in double.

namespace detail {

struct Node {
    Tensor value;
    Tensor grad; // allocated lazily, same shape as value
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Propagates node.grad into parents' grads. Empty for leaves.
    std::function<void(Node&)> backward_op;

    Tensor& grad_ref() {
        if (grad.empty()) grad = Tensor(value.shape());
        return grad;
    }
};

} // namespace detail

// Scoped switch that disables graph construction (eval-mode forward).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

bool grad_enabled();

class Var {
public:
    Var() = default;

    static Var leaf(Tensor value, bool requires_grad = false);
    static Var constant(Tensor value) { return leaf(std::move(value), false); }
    static Var scalar(double v) { return leaf(Tensor::scalar(v), false); }

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    Tensor& grad() { return node_->grad_ref(); }
    const Tensor& grad() const { return node_->grad_ref(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }

    const std::vector<int>& shape() const { return node_->value.shape(); }
    std::int64_t size() const { return node_->value.size(); }
    double item() const { return node_->value[0]; }

    void zero_grad() {
        if (node_ && !node_->grad.empty()) node_->grad.fill(0.0);
    }

    // Runs reverse accumulation from this scalar node.
    void backward() const;

    // Same value, cut off from the graph.
    Var detach() const { return constant(node_->value); }

    std::shared_ptr<detail::Node> node() const { return node_; }

private:
    explicit Var(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
    std::shared_ptr<detail::Node> node_;

    friend Var make_op(Tensor value, std::vector<Var> parents,
                       std::function<void(detail::Node&)> backward_op);
};

// Builds a graph node; drops the backward closure when grads are off or no
// parent needs them.
Var make_op(Tensor value, std::vector<Var> parents,
            std::function<void(detail::Node&)> backward_op);

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_scalar(const Var& a, double s);
Var mul_scalar(const Var& a, double s);
Var neg(const Var& a);
Var relu(const Var& a);
Var tanh_op(const Var& a);
Var sigmoid(const Var& a);
Var log_op(const Var& a);
Var exp_op(const Var& a);
Var sqrt_op(const Var& a);
Var square(const Var& a);
Var reciprocal(const Var& a);
// Gradient is passed through only inside [lo, hi].
Var clamp(const Var& a, double lo, double hi);

// ---- scalar (1-element Var) broadcasting ----
Var scale(const Var& a, const Var& s);     // a * s, s is [1]
Var div_by(const Var& a, const Var& s);    // a / s, s is [1]

// ---- reductions / broadcasts ----
Var sum_all(const Var& a);                 // -> [1]
Var mean_all(const Var& a);                // -> [1]
Var channel_mean(const Var& a);            // [C,H,W] -> [C]
Var bc_add(const Var& a, const Var& v);    // [C,H,W] + [C]
Var bc_sub(const Var& a, const Var& v);    // [C,H,W] - [C]
Var bc_mul(const Var& a, const Var& v);    // [C,H,W] * [C]

// ---- structure ----
Var concat_channels(const Var& a, const Var& b);            // [C1,H,W] ++ [C2,H,W]
Var crop(const Var& a, int r0, int r1, int c0, int c1);     // rows [r0,r1), cols [c0,c1)
Var flatten(const Var& a);                                  // -> [numel]

// ---- dense / conv ----
Var linear(const Var& x, const Var& w, const Var& b);       // w:[M,N] x:[N] b:[M]
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
// w: [Cin, Cout, kh, kw]; output (H-1)*stride - 2*pad + kh + output_padding.
Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int stride, int pad,
                     int output_padding = 0);

// ---- sampling ----
// Bilinear resize with aligned corners; differentiable in x.
Var bilinear_resize(const Var& x, int out_h, int out_w);
// Backward warp: out(c,i,j) samples x at (j + sx*flow_x(i,j), i + sy*flow_y(i,j)),
// clamped to the frame; differentiable in x and flow. flow: [2,H,W], channel 0 = x.
Var warp_backward(const Var& x, const Var& flow, double sx, double sy);

// ---- composites ----
Var softmax_vec(const Var& logits);        // [N] -> [N], stable
Var mse_sum(const Var& a, const Var& b);   // sum((a-b)^2) -> [1]
// Binary cross entropy of a [1] score against constant target, eps-clamped.
Var bce(const Var& score, double target, double eps = 1e-7);

} // namespace retvi
