#include "retvi/autograd.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace retvi {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;
using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

namespace {
thread_local bool g_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool grad_enabled() { return g_grad_enabled; }

Var Var::leaf(Tensor value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad && g_grad_enabled;
    return Var(std::move(n));
}

Var make_op(Tensor value, std::vector<Var> parents,
            std::function<void(Node&)> backward_op) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    bool need = false;
    if (g_grad_enabled)
        for (const Var& p : parents) need = need || p.requires_grad();
    if (need) {
        n->requires_grad = true;
        n->parents.reserve(parents.size());
        for (Var& p : parents) n->parents.push_back(p.node());
        n->backward_op = std::move(backward_op);
    }
    return Var(std::move(n));
}

void Var::backward() const {
    if (!node_ || node_->value.size() != 1)
        throw ShapeError("backward() requires a scalar root");
    if (!node_->requires_grad) return;
    node_->grad_ref()[0] = 1.0;

    // Topological order, leaves first; processed reversed so every node's
    // gradient is complete before it propagates.
    std::vector<Node*> topo;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            Node* p = n->parents[i++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            topo.push_back(n);
            stack.pop_back();
        }
    }
    for (auto it = topo.rbegin(); it != topo.rend(); ++it)
        if ((*it)->backward_op) (*it)->backward_op(**it);
}

namespace {

void accumulate(const NodePtr& p, const Tensor& g) {
    if (!p->requires_grad) return;
    Tensor& pg = p->grad_ref();
    const double* src = g.data();
    double* dst = pg.data();
    const std::int64_t n = g.size();
    for (std::int64_t i = 0; i < n; ++i) dst[i] += src[i];
}

void check_same_shape(const Var& a, const Var& b, const char* what) {
    if (!a.value().same_shape(b.value()))
        throw ShapeError(std::string(what) + ": shape mismatch");
}

template <class ValueFn, class GradFn>
Var unary_op(const Var& x, ValueFn vf, GradFn df) {
    Tensor out(x.shape());
    const double* xv = x.value().data();
    double* ov = out.data();
    const std::int64_t n = out.size();
    for (std::int64_t i = 0; i < n; ++i) ov[i] = vf(xv[i]);
    return make_op(std::move(out), {x}, [df](Node& self) {
        const NodePtr& p = self.parents[0];
        if (!p->requires_grad) return;
        Tensor& pg = p->grad_ref();
        const double* xv = p->value.data();
        const double* yv = self.value.data();
        const double* g = self.grad.data();
        const std::int64_t n = self.value.size();
        for (std::int64_t i = 0; i < n; ++i) pg[i] += g[i] * df(xv[i], yv[i]);
    });
}

} // namespace

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    Tensor out(a.shape());
    const std::int64_t n = out.size();
    for (std::int64_t i = 0; i < n; ++i) out[i] = a.value()[i] + b.value()[i];
    return make_op(std::move(out), {a, b}, [](Node& self) {
        accumulate(self.parents[0], self.grad);
        accumulate(self.parents[1], self.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    Tensor out(a.shape());
    const std::int64_t n = out.size();
    for (std::int64_t i = 0; i < n; ++i) out[i] = a.value()[i] - b.value()[i];
    return make_op(std::move(out), {a, b}, [](Node& self) {
        accumulate(self.parents[0], self.grad);
        if (const NodePtr& p = self.parents[1]; p->requires_grad) {
            Tensor& pg = p->grad_ref();
            for (std::int64_t i = 0; i < self.grad.size(); ++i) pg[i] -= self.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Tensor out(a.shape());
    const std::int64_t n = out.size();
    for (std::int64_t i = 0; i < n; ++i) out[i] = a.value()[i] * b.value()[i];
    return make_op(std::move(out), {a, b}, [](Node& self) {
        const NodePtr& pa = self.parents[0];
        const NodePtr& pb = self.parents[1];
        const std::int64_t n = self.grad.size();
        if (pa->requires_grad) {
            Tensor& g = pa->grad_ref();
            for (std::int64_t i = 0; i < n; ++i) g[i] += self.grad[i] * pb->value[i];
        }
        if (pb->requires_grad) {
            Tensor& g = pb->grad_ref();
            for (std::int64_t i = 0; i < n; ++i) g[i] += self.grad[i] * pa->value[i];
        }
    });
}

Var add_scalar(const Var& a, double s) {
    return unary_op(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var mul_scalar(const Var& a, double s) {
    return unary_op(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Var neg(const Var& a) { return mul_scalar(a, -1.0); }

Var relu(const Var& a) {
    return unary_op(a, [](double x) { return x > 0.0 ? x : 0.0; },
                    [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var tanh_op(const Var& a) {
    return unary_op(a, [](double x) { return std::tanh(x); },
                    [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& a) {
    return unary_op(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                    [](double, double y) { return y * (1.0 - y); });
}

Var log_op(const Var& a) {
    return unary_op(a, [](double x) { return std::log(x); },
                    [](double x, double) { return 1.0 / x; });
}

Var exp_op(const Var& a) {
    return unary_op(a, [](double x) { return std::exp(x); },
                    [](double, double y) { return y; });
}

Var sqrt_op(const Var& a) {
    return unary_op(a, [](double x) { return std::sqrt(x); },
                    [](double, double y) { return 0.5 / y; });
}

Var square(const Var& a) {
    return unary_op(a, [](double x) { return x * x; },
                    [](double x, double) { return 2.0 * x; });
}

Var reciprocal(const Var& a) {
    return unary_op(a, [](double x) { return 1.0 / x; },
                    [](double, double y) { return -y * y; });
}

Var clamp(const Var& a, double lo, double hi) {
    return unary_op(a, [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
                    [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Var scale(const Var& a, const Var& s) {
    if (s.size() != 1) throw ShapeError("scale: scale factor must be [1]");
    const double sv = s.value()[0];
    Tensor out(a.shape());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * sv;
    return make_op(std::move(out), {a, s}, [](Node& self) {
        const NodePtr& pa = self.parents[0];
        const NodePtr& ps = self.parents[1];
        const double sv = ps->value[0];
        const std::int64_t n = self.grad.size();
        if (pa->requires_grad) {
            Tensor& g = pa->grad_ref();
            for (std::int64_t i = 0; i < n; ++i) g[i] += self.grad[i] * sv;
        }
        if (ps->requires_grad) {
            double acc = 0.0;
            for (std::int64_t i = 0; i < n; ++i) acc += self.grad[i] * pa->value[i];
            ps->grad_ref()[0] += acc;
        }
    });
}

Var div_by(const Var& a, const Var& s) {
    if (s.size() != 1) throw ShapeError("div_by: divisor must be [1]");
    const double sv = s.value()[0];
    Tensor out(a.shape());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] / sv;
    return make_op(std::move(out), {a, s}, [](Node& self) {
        const NodePtr& pa = self.parents[0];
        const NodePtr& ps = self.parents[1];
        const double sv = ps->value[0];
        const std::int64_t n = self.grad.size();
        if (pa->requires_grad) {
            Tensor& g = pa->grad_ref();
            for (std::int64_t i = 0; i < n; ++i) g[i] += self.grad[i] / sv;
        }
        if (ps->requires_grad) {
            double acc = 0.0;
            for (std::int64_t i = 0; i < n; ++i) acc += self.grad[i] * pa->value[i];
            ps->grad_ref()[0] -= acc / (sv * sv);
        }
    });
}

Var sum_all(const Var& a) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) acc += a.value()[i];
    return make_op(Tensor::scalar(acc), {a}, [](Node& self) {
        const NodePtr& p = self.parents[0];
        if (!p->requires_grad) return;
        Tensor& g = p->grad_ref();
        const double gv = self.grad[0];
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] += gv;
    });
}

Var mean_all(const Var& a) {
    return mul_scalar(sum_all(a), 1.0 / static_cast<double>(a.size()));
}

Var channel_mean(const Var& a) {
    if (a.value().ndim() != 3) throw ShapeError("channel_mean: expects [C,H,W]");
    const int C = a.value().channels();
    const std::int64_t hw = static_cast<std::int64_t>(a.value().height()) * a.value().width();
    Tensor out({C});
    for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        const double* p = a.value().data() + c * hw;
        for (std::int64_t i = 0; i < hw; ++i) acc += p[i];
        out[c] = acc / static_cast<double>(hw);
    }
    return make_op(std::move(out), {a}, [C, hw](Node& self) {
        const NodePtr& p = self.parents[0];
        if (!p->requires_grad) return;
        Tensor& g = p->grad_ref();
        for (int c = 0; c < C; ++c) {
            const double gv = self.grad[c] / static_cast<double>(hw);
            double* dst = g.data() + c * hw;
            for (std::int64_t i = 0; i < hw; ++i) dst[i] += gv;
        }
    });
}

namespace {

enum class BcKind { Add, Sub, Mul };

Var bc_op(const Var& a, const Var& v, BcKind kind) {
    if (a.value().ndim() != 3 || v.value().ndim() != 1 || v.value().dim(0) != a.value().channels())
        throw ShapeError("broadcast op: expects [C,H,W] with [C]");
    const int C = a.value().channels();
    const std::int64_t hw = static_cast<std::int64_t>(a.value().height()) * a.value().width();
    Tensor out(a.shape());
    for (int c = 0; c < C; ++c) {
        const double* src = a.value().data() + c * hw;
        double* dst = out.data() + c * hw;
        const double vv = v.value()[c];
        switch (kind) {
        case BcKind::Add: for (std::int64_t i = 0; i < hw; ++i) dst[i] = src[i] + vv; break;
        case BcKind::Sub: for (std::int64_t i = 0; i < hw; ++i) dst[i] = src[i] - vv; break;
        case BcKind::Mul: for (std::int64_t i = 0; i < hw; ++i) dst[i] = src[i] * vv; break;
        }
    }
    return make_op(std::move(out), {a, v}, [C, hw, kind](Node& self) {
        const NodePtr& pa = self.parents[0];
        const NodePtr& pv = self.parents[1];
        if (pa->requires_grad) {
            Tensor& g = pa->grad_ref();
            for (int c = 0; c < C; ++c) {
                const double* gs = self.grad.data() + c * hw;
                double* gd = g.data() + c * hw;
                if (kind == BcKind::Mul) {
                    const double vv = pv->value[c];
                    for (std::int64_t i = 0; i < hw; ++i) gd[i] += gs[i] * vv;
                } else {
                    for (std::int64_t i = 0; i < hw; ++i) gd[i] += gs[i];
                }
            }
        }
        if (pv->requires_grad) {
            Tensor& g = pv->grad_ref();
            for (int c = 0; c < C; ++c) {
                const double* gs = self.grad.data() + c * hw;
                double acc = 0.0;
                if (kind == BcKind::Mul) {
                    const double* av = pa->value.data() + c * hw;
                    for (std::int64_t i = 0; i < hw; ++i) acc += gs[i] * av[i];
                } else {
                    for (std::int64_t i = 0; i < hw; ++i) acc += gs[i];
                }
                g[c] += (kind == BcKind::Sub) ? -acc : acc;
            }
        }
    });
}

} // namespace

Var bc_add(const Var& a, const Var& v) { return bc_op(a, v, BcKind::Add); }
Var bc_sub(const Var& a, const Var& v) { return bc_op(a, v, BcKind::Sub); }
Var bc_mul(const Var& a, const Var& v) { return bc_op(a, v, BcKind::Mul); }

Var concat_channels(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.ndim() != 3 || bv.ndim() != 3 || av.height() != bv.height() || av.width() != bv.width())
        throw ShapeError("concat_channels: spatial dims must match");
    const int ca = av.channels(), cb = bv.channels();
    const std::int64_t hw = static_cast<std::int64_t>(av.height()) * av.width();
    Tensor out({ca + cb, av.height(), av.width()});
    std::copy(av.data(), av.data() + ca * hw, out.data());
    std::copy(bv.data(), bv.data() + cb * hw, out.data() + ca * hw);
    return make_op(std::move(out), {a, b}, [ca, cb, hw](Node& self) {
        const NodePtr& pa = self.parents[0];
        const NodePtr& pb = self.parents[1];
        if (pa->requires_grad) {
            Tensor& g = pa->grad_ref();
            for (std::int64_t i = 0; i < ca * hw; ++i) g[i] += self.grad[i];
        }
        if (pb->requires_grad) {
            Tensor& g = pb->grad_ref();
            const double* gs = self.grad.data() + ca * hw;
            for (std::int64_t i = 0; i < cb * hw; ++i) g[i] += gs[i];
        }
    });
}

Var crop(const Var& a, int r0, int r1, int c0, int c1) {
    const Tensor& av = a.value();
    if (av.ndim() != 3) throw ShapeError("crop: expects [C,H,W]");
    if (r0 < 0 || c0 < 0 || r1 > av.height() || c1 > av.width() || r0 >= r1 || c0 >= c1)
        throw ShapeError("crop: window out of bounds");
    const int C = av.channels(), H = av.height(), W = av.width();
    const int oh = r1 - r0, ow = c1 - c0;
    Tensor out({C, oh, ow});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < oh; ++y) {
            const double* src = av.data() + (static_cast<std::int64_t>(c) * H + r0 + y) * W + c0;
            std::copy(src, src + ow, out.data() + (static_cast<std::int64_t>(c) * oh + y) * ow);
        }
    return make_op(std::move(out), {a}, [C, H, W, r0, c0, oh, ow](Node& self) {
        const NodePtr& p = self.parents[0];
        if (!p->requires_grad) return;
        Tensor& g = p->grad_ref();
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < oh; ++y) {
                const double* gs = self.grad.data() + (static_cast<std::int64_t>(c) * oh + y) * ow;
                double* gd = g.data() + (static_cast<std::int64_t>(c) * H + r0 + y) * W + c0;
                for (int x = 0; x < ow; ++x) gd[x] += gs[x];
            }
    });
}

Var flatten(const Var& a) {
    Tensor out({static_cast<int>(a.size())});
    std::copy(a.value().data(), a.value().data() + a.size(), out.data());
    return make_op(std::move(out), {a}, [](Node& self) {
        accumulate(self.parents[0], self.grad);
    });
}

// Plain loops: the dense layers are small and a fixed summation order keeps
// training bitwise reproducible across runs.
Var linear(const Var& x, const Var& w, const Var& b) {
    const Tensor& wv = w.value();
    if (wv.ndim() != 2 || x.value().ndim() != 1 || wv.dim(1) != x.value().dim(0) ||
        b.value().dim(0) != wv.dim(0))
        throw ShapeError("linear: incompatible shapes");
    const int M = wv.dim(0), N = wv.dim(1);
    Tensor out({M});
    for (int m = 0; m < M; ++m) {
        const double* row = wv.data() + static_cast<std::int64_t>(m) * N;
        double acc = b.value()[m];
        for (int n = 0; n < N; ++n) acc += row[n] * x.value()[n];
        out[m] = acc;
    }
    return make_op(std::move(out), {x, w, b}, [M, N](Node& self) {
        const NodePtr& px = self.parents[0];
        const NodePtr& pw = self.parents[1];
        const NodePtr& pb = self.parents[2];
        const double* g = self.grad.data();
        if (px->requires_grad) {
            Tensor& gx = px->grad_ref();
            const double* wd = pw->value.data();
            for (int m = 0; m < M; ++m) {
                const double gm = g[m];
                const double* row = wd + static_cast<std::int64_t>(m) * N;
                for (int n = 0; n < N; ++n) gx[n] += gm * row[n];
            }
        }
        if (pw->requires_grad) {
            Tensor& gw = pw->grad_ref();
            const double* xd = px->value.data();
            for (int m = 0; m < M; ++m) {
                const double gm = g[m];
                double* row = gw.data() + static_cast<std::int64_t>(m) * N;
                for (int n = 0; n < N; ++n) row[n] += gm * xd[n];
            }
        }
        if (pb->requires_grad) {
            Tensor& gb = pb->grad_ref();
            for (int m = 0; m < M; ++m) gb[m] += g[m];
        }
    });
}

namespace {

int conv_out_dim(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

// col: [C*k*k, oh*ow] from image [C,H,W].
void im2col(const double* img, int C, int H, int W, int k, int stride, int pad,
            int oh, int ow, double* col) {
    for (int c = 0; c < C; ++c) {
        const double* ch = img + static_cast<std::int64_t>(c) * H * W;
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                double* row = col + ((static_cast<std::int64_t>(c) * k + ky) * k + kx) *
                                        (static_cast<std::int64_t>(oh) * ow);
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    double* dst = row + static_cast<std::int64_t>(oy) * ow;
                    if (iy < 0 || iy >= H) {
                        std::fill(dst, dst + ow, 0.0);
                        continue;
                    }
                    const double* src = ch + static_cast<std::int64_t>(iy) * W;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        dst[ox] = (ix >= 0 && ix < W) ? src[ix] : 0.0;
                    }
                }
            }
    }
}

// Scatter-add inverse of im2col.
void col2im(const double* col, int C, int H, int W, int k, int stride, int pad,
            int oh, int ow, double* img) {
    for (int c = 0; c < C; ++c) {
        double* ch = img + static_cast<std::int64_t>(c) * H * W;
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const double* row = col + ((static_cast<std::int64_t>(c) * k + ky) * k + kx) *
                                              (static_cast<std::int64_t>(oh) * ow);
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) continue;
                    const double* src = row + static_cast<std::int64_t>(oy) * ow;
                    double* dst = ch + static_cast<std::int64_t>(iy) * W;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < W) dst[ix] += src[ox];
                    }
                }
            }
    }
}

} // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    if (xv.ndim() != 3 || wv.ndim() != 4) throw ShapeError("conv2d: bad ranks");
    const int Cin = xv.channels(), H = xv.height(), W = xv.width();
    const int Cout = wv.dim(0), k = wv.dim(2);
    if (wv.dim(1) != Cin) throw ShapeError("conv2d: input channels do not match weights");
    if (wv.dim(3) != k) throw ShapeError("conv2d: only square kernels supported");
    const int oh = conv_out_dim(H, k, stride, pad);
    const int ow = conv_out_dim(W, k, stride, pad);
    if (oh <= 0 || ow <= 0) throw ShapeError("conv2d: output would be empty");

    const std::int64_t kk = static_cast<std::int64_t>(Cin) * k * k;
    const std::int64_t ohw = static_cast<std::int64_t>(oh) * ow;
    std::vector<double> col(static_cast<size_t>(kk * ohw));
    im2col(xv.data(), Cin, H, W, k, stride, pad, oh, ow, col.data());

    Tensor out({Cout, oh, ow});
    {
        ECMap wm(wv.data(), Cout, kk);
        ECMap cm(col.data(), kk, ohw);
        EMap om(out.data(), Cout, ohw);
        om.noalias() = wm * cm;
    }
    for (int co = 0; co < Cout; ++co) {
        const double bv = b.value()[co];
        double* dst = out.data() + co * ohw;
        for (std::int64_t i = 0; i < ohw; ++i) dst[i] += bv;
    }

    return make_op(std::move(out), {x, w, b},
                   [Cin, H, W, Cout, k, stride, pad, oh, ow, kk, ohw](Node& self) {
        const NodePtr& px = self.parents[0];
        const NodePtr& pw = self.parents[1];
        const NodePtr& pb = self.parents[2];
        ECMap gy(self.grad.data(), Cout, ohw);
        if (pb->requires_grad) {
            // fixed-order reduction keeps runs bitwise reproducible
            Tensor& gb = pb->grad_ref();
            for (int co = 0; co < Cout; ++co) {
                const double* g = self.grad.data() + co * ohw;
                double acc = 0.0;
                for (std::int64_t i = 0; i < ohw; ++i) acc += g[i];
                gb[co] += acc;
            }
        }
        if (pw->requires_grad) {
            std::vector<double> col(static_cast<size_t>(kk * ohw));
            im2col(px->value.data(), Cin, H, W, k, stride, pad, oh, ow, col.data());
            ECMap cm(col.data(), kk, ohw);
            EMap gw(pw->grad_ref().data(), Cout, kk);
            gw.noalias() += gy * cm.transpose();
        }
        if (px->requires_grad) {
            std::vector<double> gcol(static_cast<size_t>(kk * ohw));
            ECMap wm(pw->value.data(), Cout, kk);
            EMap gc(gcol.data(), kk, ohw);
            gc.noalias() = wm.transpose() * gy;
            col2im(gcol.data(), Cin, H, W, k, stride, pad, oh, ow, px->grad_ref().data());
        }
    });
}

Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int stride, int pad,
                     int output_padding) {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    if (xv.ndim() != 3 || wv.ndim() != 4) throw ShapeError("conv_transpose2d: bad ranks");
    if (output_padding < 0 || output_padding >= stride)
        throw ShapeError("conv_transpose2d: output_padding must be in [0, stride)");
    const int Cin = xv.channels(), H = xv.height(), W = xv.width();
    const int Cout = wv.dim(1), k = wv.dim(2);
    if (wv.dim(0) != Cin) throw ShapeError("conv_transpose2d: input channels do not match weights");
    const int oh = (H - 1) * stride - 2 * pad + k + output_padding;
    const int ow = (W - 1) * stride - 2 * pad + k + output_padding;
    if (oh <= 0 || ow <= 0) throw ShapeError("conv_transpose2d: output would be empty");

    const std::int64_t kk = static_cast<std::int64_t>(Cout) * k * k;
    const std::int64_t hw = static_cast<std::int64_t>(H) * W;
    std::vector<double> col(static_cast<size_t>(kk * hw));
    {
        ECMap wm(wv.data(), Cin, kk);
        ECMap xm(xv.data(), Cin, hw);
        EMap cm(col.data(), kk, hw);
        cm.noalias() = wm.transpose() * xm;
    }
    Tensor out({Cout, oh, ow});
    col2im(col.data(), Cout, oh, ow, k, stride, pad, H, W, out.data());
    for (int co = 0; co < Cout; ++co) {
        const double bv = b.value()[co];
        double* dst = out.data() + static_cast<std::int64_t>(co) * oh * ow;
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(oh) * ow; ++i) dst[i] += bv;
    }

    return make_op(std::move(out), {x, w, b},
                   [Cin, H, W, Cout, k, stride, pad, oh, ow, kk, hw](Node& self) {
        const NodePtr& px = self.parents[0];
        const NodePtr& pw = self.parents[1];
        const NodePtr& pb = self.parents[2];
        if (pb->requires_grad) {
            Tensor& gb = pb->grad_ref();
            for (int co = 0; co < Cout; ++co) {
                const double* g = self.grad.data() + static_cast<std::int64_t>(co) * oh * ow;
                double acc = 0.0;
                for (std::int64_t i = 0; i < static_cast<std::int64_t>(oh) * ow; ++i) acc += g[i];
                gb[co] += acc;
            }
        }
        if (!px->requires_grad && !pw->requires_grad) return;
        std::vector<double> gcol(static_cast<size_t>(kk * hw));
        im2col(self.grad.data(), Cout, oh, ow, k, stride, pad, H, W, gcol.data());
        ECMap gc(gcol.data(), kk, hw);
        if (px->requires_grad) {
            ECMap wm(pw->value.data(), Cin, kk);
            EMap gx(px->grad_ref().data(), Cin, hw);
            gx.noalias() += wm * gc;
        }
        if (pw->requires_grad) {
            ECMap xm(px->value.data(), Cin, hw);
            EMap gw(pw->grad_ref().data(), Cin, kk);
            gw.noalias() += xm * gc.transpose();
        }
    });
}

namespace {

struct Axis {
    std::vector<int> i0, i1;
    std::vector<double> f;
};

Axis resize_axis(int in, int out) {
    Axis a;
    a.i0.resize(out);
    a.i1.resize(out);
    a.f.resize(out);
    const double scale = (out > 1) ? static_cast<double>(in - 1) / (out - 1) : 0.0;
    for (int i = 0; i < out; ++i) {
        const double p = i * scale;
        int p0 = static_cast<int>(std::floor(p));
        if (p0 > in - 2) p0 = std::max(in - 2, 0);
        a.i0[i] = p0;
        a.i1[i] = std::min(p0 + 1, in - 1);
        a.f[i] = p - p0;
    }
    return a;
}

} // namespace

Var bilinear_resize(const Var& x, int out_h, int out_w) {
    const Tensor& xv = x.value();
    if (xv.ndim() != 3) throw ShapeError("bilinear_resize: expects [C,H,W]");
    if (out_h < 1 || out_w < 1) throw ShapeError("bilinear_resize: target too small");
    const int C = xv.channels(), H = xv.height(), W = xv.width();
    const Axis ay = resize_axis(H, out_h), ax = resize_axis(W, out_w);

    Tensor out({C, out_h, out_w});
    for (int c = 0; c < C; ++c)
        for (int oy = 0; oy < out_h; ++oy) {
            const int y0 = ay.i0[oy], y1 = ay.i1[oy];
            const double fy = ay.f[oy];
            for (int ox = 0; ox < out_w; ++ox) {
                const int x0 = ax.i0[ox], x1 = ax.i1[ox];
                const double fx = ax.f[ox];
                out.at(c, oy, ox) =
                    (1 - fy) * ((1 - fx) * xv.at(c, y0, x0) + fx * xv.at(c, y0, x1)) +
                    fy * ((1 - fx) * xv.at(c, y1, x0) + fx * xv.at(c, y1, x1));
            }
        }
    return make_op(std::move(out), {x}, [C, out_h, out_w, ay, ax](Node& self) {
        const NodePtr& p = self.parents[0];
        if (!p->requires_grad) return;
        Tensor& g = p->grad_ref();
        for (int c = 0; c < C; ++c)
            for (int oy = 0; oy < out_h; ++oy) {
                const int y0 = ay.i0[oy], y1 = ay.i1[oy];
                const double fy = ay.f[oy];
                for (int ox = 0; ox < out_w; ++ox) {
                    const int x0 = ax.i0[ox], x1 = ax.i1[ox];
                    const double fx = ax.f[ox];
                    const double gv = self.grad.at(c, oy, ox);
                    g.at(c, y0, x0) += gv * (1 - fy) * (1 - fx);
                    g.at(c, y0, x1) += gv * (1 - fy) * fx;
                    g.at(c, y1, x0) += gv * fy * (1 - fx);
                    g.at(c, y1, x1) += gv * fy * fx;
                }
            }
    });
}

Var warp_backward(const Var& x, const Var& flow, double sx, double sy) {
    const Tensor& xv = x.value();
    const Tensor& fv = flow.value();
    if (xv.ndim() != 3 || fv.ndim() != 3 || fv.channels() != 2 ||
        fv.height() != xv.height() || fv.width() != xv.width())
        throw ShapeError("warp_backward: flow must be [2,H,W] matching the frame");
    const int C = xv.channels(), H = xv.height(), W = xv.width();

    Tensor out({C, H, W});
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            const double xs = j + sx * fv.at(0, i, j);
            const double ys = i + sy * fv.at(1, i, j);
            const double xc = std::min(std::max(xs, 0.0), static_cast<double>(W - 1));
            const double yc = std::min(std::max(ys, 0.0), static_cast<double>(H - 1));
            int x0 = std::min(static_cast<int>(std::floor(xc)), std::max(W - 2, 0));
            int y0 = std::min(static_cast<int>(std::floor(yc)), std::max(H - 2, 0));
            const int x1 = std::min(x0 + 1, W - 1);
            const int y1 = std::min(y0 + 1, H - 1);
            const double fx = xc - x0, fy = yc - y0;
            for (int c = 0; c < C; ++c)
                out.at(c, i, j) =
                    (1 - fy) * ((1 - fx) * xv.at(c, y0, x0) + fx * xv.at(c, y0, x1)) +
                    fy * ((1 - fx) * xv.at(c, y1, x0) + fx * xv.at(c, y1, x1));
        }

    return make_op(std::move(out), {x, flow}, [C, H, W, sx, sy](Node& self) {
        const NodePtr& px = self.parents[0];
        const NodePtr& pf = self.parents[1];
        const Tensor& xv = px->value;
        const Tensor& fv = pf->value;
        Tensor* gx = px->requires_grad ? &px->grad_ref() : nullptr;
        Tensor* gf = pf->requires_grad ? &pf->grad_ref() : nullptr;
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) {
                const double xs = j + sx * fv.at(0, i, j);
                const double ys = i + sy * fv.at(1, i, j);
                const double xc = std::min(std::max(xs, 0.0), static_cast<double>(W - 1));
                const double yc = std::min(std::max(ys, 0.0), static_cast<double>(H - 1));
                int x0 = std::min(static_cast<int>(std::floor(xc)), std::max(W - 2, 0));
                int y0 = std::min(static_cast<int>(std::floor(yc)), std::max(H - 2, 0));
                const int x1 = std::min(x0 + 1, W - 1);
                const int y1 = std::min(y0 + 1, H - 1);
                const double fx = xc - x0, fy = yc - y0;
                const bool in_x = xs > 0.0 && xs < W - 1;
                const bool in_y = ys > 0.0 && ys < H - 1;
                double dldx = 0.0, dldy = 0.0;
                for (int c = 0; c < C; ++c) {
                    const double gv = self.grad.at(c, i, j);
                    if (gx) {
                        gx->at(c, y0, x0) += gv * (1 - fy) * (1 - fx);
                        gx->at(c, y0, x1) += gv * (1 - fy) * fx;
                        gx->at(c, y1, x0) += gv * fy * (1 - fx);
                        gx->at(c, y1, x1) += gv * fy * fx;
                    }
                    if (gf) {
                        dldx += gv * ((1 - fy) * (xv.at(c, y0, x1) - xv.at(c, y0, x0)) +
                                      fy * (xv.at(c, y1, x1) - xv.at(c, y1, x0)));
                        dldy += gv * ((1 - fx) * (xv.at(c, y1, x0) - xv.at(c, y0, x0)) +
                                      fx * (xv.at(c, y1, x1) - xv.at(c, y0, x1)));
                    }
                }
                if (gf) {
                    if (in_x) gf->at(0, i, j) += dldx * sx;
                    if (in_y) gf->at(1, i, j) += dldy * sy;
                }
            }
    });
}

Var softmax_vec(const Var& logits) {
    if (logits.value().ndim() != 1) throw ShapeError("softmax_vec: expects [N]");
    double m = logits.value()[0];
    for (std::int64_t i = 1; i < logits.size(); ++i) m = std::max(m, logits.value()[i]);
    // The max shift is a constant; softmax is shift-invariant so the gradient
    // through the remaining graph is exact.
    Var e = exp_op(add_scalar(logits, -m));
    return div_by(e, sum_all(e));
}

Var mse_sum(const Var& a, const Var& b) { return sum_all(square(sub(a, b))); }

Var bce(const Var& score, double target, double eps) {
    if (score.size() != 1) throw ShapeError("bce: expects scalar score");
    Var p = clamp(score, eps, 1.0 - eps);
    Var loss = add(mul_scalar(log_op(p), target),
                   mul_scalar(log_op(add_scalar(neg(p), 1.0)), 1.0 - target));
    return neg(loss);
}

bool all_finite(const Tensor& t) {
    for (std::int64_t i = 0; i < t.size(); ++i)
        if (!std::isfinite(t[i])) return false;
    return true;
}

double max_abs(const Tensor& t) {
    double m = 0.0;
    for (std::int64_t i = 0; i < t.size(); ++i) m = std::max(m, std::abs(t[i]));
    return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ShapeError("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace retvi
