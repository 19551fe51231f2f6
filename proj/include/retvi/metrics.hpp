#pragma once

#include <iosfwd>

#include "retvi/image.hpp"

namespace retvi {

struct PatchSpec {
    int patch_size = 7;
    int stride = 4;

    void validate() const {
        if (patch_size < 1 || stride < 1) throw DomainError("patch size and stride must be >= 1");
    }
};

// A square view into a frame.
struct Patch {
    const Tensor* raster = nullptr;
    int y = 0, x = 0, size = 0;
};

// Sum of squared distances over pixels and channels.
double patch_ssd(const Patch& p, const Patch& q);

// Bidirectional similarity error between two frames of possibly different
// sizes: exhaustive nearest-patch search in both directions, normalized by
// the combined patch count.
double bidirectional_error(const Frame& fs, const Frame& ft, const PatchSpec& spec = {});

struct BidirReport {
    std::vector<double> per_frame;
    double mean = 0.0;
};
BidirReport mean_error(const FrameSequence& src, const FrameSequence& ret,
                       const PatchSpec& spec = {});

// (1/100) * sum over pixels of the channel-mean absolute difference on the
// 0-255 scale, divided by H*W.
double frame_difference(const Frame& a, const Frame& b);

struct StabilityReport {
    std::vector<double> step_differences; // D_{t -> t-1}, t = 2..n
    double stb = 0.0;
};
StabilityReport stability(const FrameSequence& seq);

void write_bidir_report(std::ostream& os, const BidirReport& report);
void write_stability_report(std::ostream& os, const StabilityReport& report);

} // namespace retvi
