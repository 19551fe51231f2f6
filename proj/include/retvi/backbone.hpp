#pragma once

#include <array>

#include "retvi/nn.hpp"

namespace retvi {

// Frozen classification backbone used by the perceptual losses: four
// stride-2 conv stages (the downsampling feature maps Phi_1..Phi_4) and a
// 1000-way classifier head. Weights are an external artifact resolved
// through the RETVI_CACHE directory; when absent they are synthesized
// deterministically from the identity name and cached there, so the
// identity + checksum recorded in checkpoints stays meaningful.
class Backbone {
public:
    static constexpr int kInputRes = 224;
    static constexpr int kNumClasses = 1000;
    static constexpr int kStages = 4;

    Backbone();

    struct Features {
        std::array<Var, kStages> stages; // Phi_1..Phi_4
        Var logits;                      // [1000]
    };

    // Accepts any [3,H,W]; resizes to 224 internally. Weights never receive
    // gradients; inputs do.
    Features forward(const Var& frame) const;

    const std::string& name() const { return name_; }
    std::uint64_t checksum() const { return checksum_; }

    // Stage output channel counts, for tests.
    static constexpr std::array<int, kStages> kChannels = {16, 32, 64, 128};
    // Emitted feature magnitude, calibrated toward pretrained-classifier
    // feature scales so the perceptual terms carry realistic weight.
    static constexpr double kFeatureScale = 2.5;

private:
    std::string name_;
    std::uint64_t checksum_ = 0;
    std::array<Conv2d, kStages> convs_;
    Linear fc_;
};

// Cache directory: $RETVI_CACHE if set, else ~/.cache/retvi.
std::string backbone_cache_dir();

} // namespace retvi
