#include "retvi/ade.hpp"

#include <cmath>

namespace retvi {

RetargetSpec RetargetSpec::from_ratio(double r, RetargetAxis axis, double theta) {
    RetargetSpec spec;
    spec.ratio = r;
    spec.mode = r > 1.0 ? ResizeMode::Enlarge : ResizeMode::Reduce;
    spec.theta = theta;
    spec.axis = axis;
    spec.validate();
    return spec;
}

void RetargetSpec::validate() const {
    if (!(ratio > 0.0)) throw DomainError("retarget ratio must be positive");
    if (theta < 1.0) throw DomainError("theta must be >= 1");
    if (ratio < 1.0 && mode != ResizeMode::Reduce)
        throw DomainError("ratio < 1 requires reduce mode");
    if (ratio > 1.0 && mode != ResizeMode::Enlarge)
        throw DomainError("ratio > 1 requires enlarge mode");
}

int RetargetSpec::target_extent(int source_extent) const {
    return static_cast<int>(std::lround(ratio * source_extent));
}

Var grid_activation(const Var& d1) {
    if (!all_finite(d1.value())) throw NumericalError("grid_activation: non-finite input");
    // (1 - e^{-2a}) / (1 + e^{-2a}) == tanh(a)
    return tanh_op(d1);
}

Var upsample_energy(const Var& q, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw ShapeError("upsample_energy: target smaller than 1x1");
    if (q.value().ndim() != 3) throw ShapeError("upsample_energy: expects [2,h,w]");
    return bilinear_resize(q, out_h, out_w);
}

double flow_scale(double r, ResizeMode mode) {
    if (!(r > 0.0)) throw DomainError("flow_scale: ratio must be positive");
    const double s = (1.0 - r) * (1.0 - r);
    return mode == ResizeMode::Reduce ? s : -s;
}

Var build_deformation(const Var& energy, double flow_scale_value, double theta) {
    // Two factors so that scaling by theta is exactly theta * the theta=1 field.
    return mul_scalar(mul_scalar(energy, flow_scale_value), theta);
}

Var deform_and_sample(const Var& frame, const Var& field, double sx, double sy) {
    return warp_backward(frame, field, sx, sy);
}

namespace {

void check_window(int src_h, int src_w, int target_h, int target_w) {
    if (target_h > src_h || target_w > src_w)
        throw DomainError("crop_window: target exceeds source");
    if (target_h < 1 || target_w < 1) throw DomainError("crop_window: empty target");
}

} // namespace

Var crop_window(const Var& full, int target_h, int target_w) {
    const int H = full.value().height(), W = full.value().width();
    check_window(H, W, target_h, target_w);
    const int r0 = (H - target_h) / 2;
    const int c0 = (W - target_w) / 2;
    return crop(full, r0, r0 + target_h, c0, c0 + target_w);
}

Frame crop_window(const Frame& full, int target_h, int target_w) {
    NoGradGuard ng;
    return Frame(crop_window(Var::constant(full.pixels), target_h, target_w).value());
}

RetargetResult retarget_forward(const Var& frame, const RetargetSpec& spec, Cfa& cfa,
                                bool training) {
    spec.validate();
    const int H = frame.value().height(), W = frame.value().width();

    RetargetResult res;
    Var d1 = cfa.forward(frame, training);
    Var q = grid_activation(d1);
    res.energy = upsample_energy(q, H, W);
    res.flow_scale_value = flow_scale(spec.ratio, spec.mode);
    res.field = build_deformation(res.energy, res.flow_scale_value, spec.theta);
    res.warped_full = deform_and_sample(frame, res.field, W, H);

    if (spec.axis == RetargetAxis::Width) {
        res.target_h = H;
        res.target_w = spec.target_extent(W);
    } else {
        res.target_h = spec.target_extent(H);
        res.target_w = W;
    }
    if (res.target_h < 1 || res.target_w < 1)
        throw DomainError("retarget: target size collapses to zero");

    if (res.target_h <= H && res.target_w <= W) {
        res.output = crop_window(res.warped_full, res.target_h, res.target_w);
    } else {
        // Enlarging: materialize the window by resampling the warped frame.
        res.output = bilinear_resize(res.warped_full, res.target_h, res.target_w);
    }
    return res;
}

Frame retarget_frame(const Frame& v, const RetargetSpec& spec, Cfa& cfa) {
    NoGradGuard ng;
    return Frame(retarget_forward(Var::constant(v.pixels), spec, cfa, false).output.value());
}

Frame retarget_frame_to_size(const Frame& v, int target_h, int target_w, double theta, Cfa& cfa) {
    if (target_h < 1 || target_w < 1) throw DomainError("retarget: target size must be positive");
    NoGradGuard ng;
    // Width ratio that moves the aspect ratio from S_w/S_h to T_w/T_h.
    const double r = (static_cast<double>(target_w) / target_h) *
                     (static_cast<double>(v.height()) / v.width());
    RetargetSpec spec = RetargetSpec::from_ratio(r, RetargetAxis::Width, theta);
    RetargetResult res = retarget_forward(Var::constant(v.pixels), spec, cfa, false);
    Var out = res.output;
    if (out.value().height() != target_h || out.value().width() != target_w)
        out = bilinear_resize(out, target_h, target_w);
    return Frame(out.value());
}

std::array<Tensor, 3> energy_heatmaps(const Tensor& energy) {
    if (energy.ndim() != 3 || energy.channels() != 2)
        throw ShapeError("energy_heatmaps: expects [2,H,W]");
    const int H = energy.height(), W = energy.width();
    std::array<Tensor, 3> maps{Tensor({1, H, W}), Tensor({1, H, W}), Tensor({1, H, W})};
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const double ex = energy.at(0, y, x), ey = energy.at(1, y, x);
            maps[0].at(0, y, x) = 0.5 * (ex + 1.0);
            maps[1].at(0, y, x) = 0.5 * (ey + 1.0);
            maps[2].at(0, y, x) = std::sqrt(0.5 * (ex * ex + ey * ey));
        }
    return maps;
}

} // namespace retvi
