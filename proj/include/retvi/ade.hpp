#pragma once

#include <array>

#include "retvi/cfa.hpp"
#include "retvi/image.hpp"

namespace retvi {

enum class ResizeMode { Reduce, Enlarge };
enum class RetargetAxis { Width, Height };

// A resize request. ratio is T_w/S_w on the width axis (T_h/S_h on height);
// theta is the tall-video deformation multiplier, >= 1.
struct RetargetSpec {
    double ratio = 1.0;
    ResizeMode mode = ResizeMode::Reduce;
    double theta = 1.0;
    RetargetAxis axis = RetargetAxis::Width;

    // Derives the mode from the ratio; r = 1 is a no-op under either mode.
    static RetargetSpec from_ratio(double r, RetargetAxis axis = RetargetAxis::Width,
                                   double theta = 1.0);
    void validate() const;
    int target_extent(int source_extent) const; // rounded r * extent
};

// Grid activation mapping D1 into (-1,1); identical to tanh elementwise.
Var grid_activation(const Var& d1);

// Bilinear upsample of the 2x16x16 grid to the native frame size.
Var upsample_energy(const Var& q, int out_h, int out_w);

// +-(1-r)^2: positive when reducing, negative when enlarging.
double flow_scale(double r, ResizeMode mode);

// h = e * R * theta, exactly linear in theta.
Var build_deformation(const Var& energy, double flow_scale_value, double theta);

// Backward-samples the frame through the displacement field. sx/sy convert
// field units to pixels (pass S_w/S_h for extent-fraction fields, 1 for
// pixel-unit fields).
Var deform_and_sample(const Var& frame, const Var& field, double sx = 1.0, double sy = 1.0);

// Centered window [floor((S-T)/2), ...+T) on each axis; target must not
// exceed the source.
Var crop_window(const Var& full, int target_h, int target_w);
Frame crop_window(const Frame& full, int target_h, int target_w);

// Differentiable end-to-end pipeline; used by both inference and training.
struct RetargetResult {
    Var energy;      // [2,S_h,S_w]
    Var field;       // [2,S_h,S_w] deformation in extent fractions
    Var warped_full; // deformed frame at source size (pre-crop)
    Var output;      // cropped (reduce) or resampled (enlarge) to target
    double flow_scale_value = 0.0;
    int target_h = 0, target_w = 0;
};

RetargetResult retarget_forward(const Var& frame, const RetargetSpec& spec, Cfa& cfa,
                                bool training);

// Eval-mode convenience: pure function of (frame, weights).
Frame retarget_frame(const Frame& v, const RetargetSpec& spec, Cfa& cfa);

// Full target-size request (e.g. 9:16 conversion). The width axis is
// retargeted by the aspect-ratio change with the theta multiplier, then the
// result is scaled uniformly to target_h x target_w.
Frame retarget_frame_to_size(const Frame& v, int target_h, int target_w, double theta, Cfa& cfa);

// Energy channels remapped to [0,1] plus gradient magnitude, for heatmap
// export: {x-channel, y-channel, magnitude}, each [1,H,W].
std::array<Tensor, 3> energy_heatmaps(const Tensor& energy);

} // namespace retvi
