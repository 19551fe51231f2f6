#include "retvi/losses.hpp"

namespace retvi {

FidDisc::FidDisc(Rng& rng) {
    const int plan[7] = {3, 8, 16, 32, 64, 64, 64};
    for (int i = 0; i < 6; ++i) blocks.emplace_back(plan[i], plan[i + 1], 2, rng);
    // 224 halves six times to 4x4.
    hidden = Linear(64 * 4 * 4, 64, rng);
    head = Linear(64, 1, rng);
    // The head opens trusting its input (score near 0.9): the adversarial
    // term phases in only as the discriminator warms up, after the content
    // losses have shaped the warp. An untrained critic's raw gradient is
    // orders of magnitude larger than the content-loss gradients and would
    // otherwise drive the warp with noise.
    Tensor& hw = head.weight.mutable_value();
    for (std::int64_t i = 0; i < hw.size(); ++i) hw[i] *= 1e-4;
    head.bias.mutable_value().fill(4.0);
}

Var FidDisc::score(const Var& frame, bool training) {
    const Tensor& fv = frame.value();
    if (fv.ndim() != 3 || fv.channels() != 3) throw ShapeError("fid-disc: frame must be [3,H,W]");
    Var x = frame;
    if (fv.height() != kInputRes || fv.width() != kInputRes)
        x = bilinear_resize(x, kInputRes, kInputRes);
    for (auto& b : blocks) x = b(x, training);
    Var h = relu(hidden(flatten(x)));
    return clamp(sigmoid(head(h)), kEps, 1.0 - kEps);
}

void FidDisc::collect(const std::string& prefix, ParamList& out) {
    for (size_t i = 0; i < blocks.size(); ++i)
        blocks[i].collect(prefix + ".cbr" + std::to_string(i + 1), out);
    hidden.collect(prefix + ".hidden", out);
    head.collect(prefix + ".head", out);
}

ParamList FidDisc::params() {
    ParamList out;
    collect("disc", out);
    return out;
}

namespace {

Var stage_mse(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const double norm = 1.0 / static_cast<double>(av.size()); // C*H*W
    return mul_scalar(mse_sum(a, b), norm);
}

} // namespace

Var critical_region_loss(const Var& ve, const Var& re, const Backbone& bb) {
    Backbone::Features fv = bb.forward(ve);
    Backbone::Features fr = bb.forward(re);
    Var loss = stage_mse(fv.stages[0], fr.stages[0]);
    for (int i = 1; i < Backbone::kStages; ++i)
        loss = add(loss, stage_mse(fv.stages[static_cast<size_t>(i)],
                                   fr.stages[static_cast<size_t>(i)]));
    if (!all_finite(loss.value())) throw NumericalError("critical_region_loss: non-finite");
    return loss;
}

Var global_integrity_loss(const Var& vo, const Var& ro, const Backbone& bb) {
    Var po = softmax_vec(bb.forward(vo).logits);
    Var pr = softmax_vec(bb.forward(ro).logits);
    return mse_sum(po, pr);
}

Var temporal_gamma(const std::array<Var, 3>& triplet, const Backbone& bb, int stage) {
    Backbone::Features a = bb.forward(triplet[0]);
    Backbone::Features b = bb.forward(triplet[1]);
    Backbone::Features c = bb.forward(triplet[2]);
    const auto s = static_cast<size_t>(stage);
    return mean_all(mul(mul(a.stages[s], b.stages[s]), c.stages[s]));
}

Var temporal_consistency_loss(const std::array<Var, 3>& src, const std::array<Var, 3>& ret,
                              const Backbone& bb) {
    // One backbone pass per frame; gamma per stage is the mean of the
    // elementwise triple product.
    std::array<Backbone::Features, 3> fs, fr;
    for (int k = 0; k < 3; ++k) {
        fs[static_cast<size_t>(k)] = bb.forward(src[static_cast<size_t>(k)]);
        fr[static_cast<size_t>(k)] = bb.forward(ret[static_cast<size_t>(k)]);
    }
    Var loss;
    for (int i = 0; i < Backbone::kStages; ++i) {
        const auto s = static_cast<size_t>(i);
        Var gs = mean_all(mul(mul(fs[0].stages[s], fs[1].stages[s]), fs[2].stages[s]));
        Var gr = mean_all(mul(mul(fr[0].stages[s], fr[1].stages[s]), fr[2].stages[s]));
        Var term = square(sub(gs, gr));
        loss = loss.defined() ? add(loss, term) : term;
    }
    return loss;
}

FidelityLosses fidelity_losses(const Var& vo, const Var& ro, FidDisc& disc, bool training) {
    Var eta_real = disc.score(vo, training);
    Var eta_fake = disc.score(ro, training);
    FidelityLosses out;
    out.d_loss = mul_scalar(add(bce(eta_real, 1.0, FidDisc::kEps),
                                bce(eta_fake, 0.0, FidDisc::kEps)),
                            0.5);
    out.g_term = bce(eta_fake, 1.0, FidDisc::kEps);
    return out;
}

Var total_loss(const Var& l_cri, const Var& l_glo, const Var& l_tem, const Var& l_fid,
               const LossWeights& w) {
    return add(add(mul_scalar(l_cri, w.lambda_c), mul_scalar(l_glo, w.lambda_g)),
               add(mul_scalar(l_tem, w.lambda_t), mul_scalar(l_fid, w.lambda_f)));
}

} // namespace retvi
