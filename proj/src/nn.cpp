#include "retvi/nn.hpp"

#include <cmath>

namespace retvi {

Tensor kaiming_uniform(std::vector<int> shape, int fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
    return t;
}

void clip_grad_norm(ParamList& params, double max_norm) {
    double sq = 0.0;
    for (ParamRef& p : params) {
        if (!p.trainable) continue;
        const Tensor& g = p.var.grad();
        for (std::int64_t i = 0; i < g.size(); ++i) sq += g[i] * g[i];
    }
    const double norm = std::sqrt(sq);
    if (norm <= max_norm || norm == 0.0) return;
    const double scale = max_norm / norm;
    for (ParamRef& p : params) {
        if (!p.trainable) continue;
        Tensor& g = p.var.grad();
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] *= scale;
    }
}

Conv2d::Conv2d(int cin, int cout, int k, int stride_, int pad_, Rng& rng)
    : stride(stride_), pad(pad_) {
    weight = Var::leaf(kaiming_uniform({cout, cin, k, k}, cin * k * k, rng), true);
    bias = Var::leaf(Tensor({cout}), true);
}

void Conv2d::collect(const std::string& prefix, ParamList& out) {
    out.push_back({prefix + ".weight", weight, true});
    out.push_back({prefix + ".bias", bias, true});
}

ConvTranspose2d::ConvTranspose2d(int cin, int cout, int k, int stride_, int pad_, Rng& rng,
                                 int output_padding_)
    : stride(stride_), pad(pad_), output_padding(output_padding_) {
    weight = Var::leaf(kaiming_uniform({cin, cout, k, k}, cin * k * k, rng), true);
    bias = Var::leaf(Tensor({cout}), true);
}

void ConvTranspose2d::collect(const std::string& prefix, ParamList& out) {
    out.push_back({prefix + ".weight", weight, true});
    out.push_back({prefix + ".bias", bias, true});
}

BatchNorm2d::BatchNorm2d(int channels) {
    gamma = Var::leaf(Tensor::full({channels}, 1.0), true);
    beta = Var::leaf(Tensor({channels}), true);
    running_mean = Var::leaf(Tensor({channels}), false);
    running_var = Var::leaf(Tensor::full({channels}, 1.0), false);
}

Var BatchNorm2d::operator()(const Var& x, bool training) {
    const int C = x.value().channels();
    if (C != gamma.value().dim(0)) throw ShapeError("batch_norm: channel mismatch");
    if (training) {
        Var mu = channel_mean(x);
        Var xc = bc_sub(x, mu);
        Var var = channel_mean(square(xc));
        Var inv = reciprocal(sqrt_op(add_scalar(var, eps)));
        // Running statistics track the batch values outside the graph.
        Tensor& rm = running_mean.mutable_value();
        Tensor& rv = running_var.mutable_value();
        for (int c = 0; c < C; ++c) {
            rm[c] = (1.0 - momentum) * rm[c] + momentum * mu.value()[c];
            rv[c] = (1.0 - momentum) * rv[c] + momentum * var.value()[c];
        }
        return bc_add(bc_mul(bc_mul(xc, inv), gamma), beta);
    }
    Tensor inv({C});
    for (int c = 0; c < C; ++c)
        inv[c] = 1.0 / std::sqrt(running_var.value()[c] + eps);
    Var xc = bc_sub(x, running_mean);
    return bc_add(bc_mul(bc_mul(xc, Var::constant(std::move(inv))), gamma), beta);
}

void BatchNorm2d::collect(const std::string& prefix, ParamList& out) {
    out.push_back({prefix + ".gamma", gamma, true});
    out.push_back({prefix + ".beta", beta, true});
    out.push_back({prefix + ".running_mean", running_mean, false});
    out.push_back({prefix + ".running_var", running_var, false});
}

Linear::Linear(int in, int out, Rng& rng) {
    weight = Var::leaf(kaiming_uniform({out, in}, in, rng), true);
    bias = Var::leaf(Tensor({out}), true);
}

void Linear::collect(const std::string& prefix, ParamList& out) {
    out.push_back({prefix + ".weight", weight, true});
    out.push_back({prefix + ".bias", bias, true});
}

CbrBlock::CbrBlock(int cin, int cout, int stride, Rng& rng)
    : conv(cin, cout, 3, stride, 1, rng), norm(cout) {}

Var CbrBlock::operator()(const Var& x, bool training) {
    return relu(norm(conv(x), training));
}

void CbrBlock::collect(const std::string& prefix, ParamList& out) {
    conv.collect(prefix + ".conv", out);
    norm.collect(prefix + ".norm", out);
}

Adam::Adam(const ParamList& params, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const ParamRef& p : params) {
        if (!p.trainable) continue;
        params_.push_back(p.var);
        slots_.push_back({p.name, Tensor(p.var.shape()), Tensor(p.var.shape())});
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor& w = params_[i].mutable_value();
        const Tensor& g = params_[i].grad();
        Tensor& m = slots_[i].m;
        Tensor& v = slots_[i].v;
        for (std::int64_t k = 0; k < w.size(); ++k) {
            m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
            v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
            w[k] -= lr_ * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + eps_);
        }
    }
}

void Adam::zero_grad() {
    for (Var& p : params_) p.zero_grad();
}

} // namespace retvi
