#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "retvi/autograd.hpp"
#include "retvi/nn.hpp"

namespace retvi::testutil {

inline Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

struct GradCheck {
    double pass_fraction = 0.0;
    double worst_rel = 0.0;
    int probes = 0;
};

// Central-difference oracle: compares autodiff gradients of a scalar-valued
// builder against (f(x+h)-f(x-h))/2h at randomly probed coordinates.
// The builder must be a pure function of its inputs.
inline GradCheck grad_check(const std::function<Var(const std::vector<Var>&)>& build,
                            std::vector<Tensor> inputs, int probes_per_input, Rng& rng,
                            double step = 1e-4, double tol = 1e-3) {
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (Tensor& t : inputs) vars.push_back(Var::leaf(t, true));
    Var loss = build(vars);
    loss.backward();

    auto eval = [&](const std::vector<Tensor>& ts) {
        NoGradGuard ng;
        std::vector<Var> vs;
        vs.reserve(ts.size());
        for (const Tensor& t : ts) vs.push_back(Var::constant(t));
        return build(vs).item();
    };

    GradCheck res;
    int passed = 0;
    for (size_t k = 0; k < inputs.size(); ++k) {
        std::vector<Tensor> work;
        for (const Var& v : vars) work.push_back(v.value());
        for (int p = 0; p < probes_per_input; ++p) {
            const std::int64_t idx =
                rng.uniform_int(0, static_cast<int>(work[k].size()) - 1);
            const double orig = work[k][idx];
            work[k][idx] = orig + step;
            const double fp = eval(work);
            work[k][idx] = orig - step;
            const double fm = eval(work);
            work[k][idx] = orig;
            const double fd = (fp - fm) / (2.0 * step);
            const double ad = vars[k].grad()[idx];
            const double err = std::abs(ad - fd);
            const double rel = err / std::max({std::abs(ad), std::abs(fd), 1e-10});
            res.worst_rel = std::max(res.worst_rel, rel);
            ++res.probes;
            if (err <= tol * std::max(std::abs(ad), std::abs(fd)) + 1e-10) ++passed;
        }
    }
    res.pass_fraction = res.probes ? static_cast<double>(passed) / res.probes : 1.0;
    return res;
}

} // namespace retvi::testutil
