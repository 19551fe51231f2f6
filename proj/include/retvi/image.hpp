#pragma once

#include <optional>
#include <string>
#include <vector>

#include "retvi/tensor.hpp"

namespace retvi {

// One raster frame, channels-first, values normalized to [0,1] on load.
struct Frame {
    Tensor pixels; // C x H x W

    Frame() = default;
    explicit Frame(Tensor t) : pixels(std::move(t)) {
        if (pixels.ndim() != 3) throw ShapeError("frame pixels must be C x H x W");
    }

    int channels() const { return pixels.channels(); }
    int height() const { return pixels.height(); }
    int width() const { return pixels.width(); }
    bool same_size(const Frame& o) const {
        return height() == o.height() && width() == o.width();
    }
};

struct FrameSequence {
    std::vector<Frame> frames;
    double fps = 0.0; // metadata only

    size_t size() const { return frames.size(); }
};

// Original frame plus its mask-extracted foreground, same dimensions.
struct ForegroundPair {
    Frame original;
    Frame foreground;
};

// Three consecutive frames at indices t-1, t, t+1.
struct ClipTriplet {
    Frame prev, cur, next;
};

// ---- PNG codec (lossless 8-bit) ----
// force_channels: 0 keeps the file's channel count (gray->1, color->3),
// 1 converts to grayscale, 3 converts to RGB.
Tensor read_png(const std::string& path, int force_channels = 0);
void write_png(const std::string& path, const Tensor& raster);

// ---- sequences ----
// Loads files matching a zero-padded numeric template (e.g. "%05d.png"),
// sorted by their numeric index.
FrameSequence load_frame_sequence(const std::string& dir, const std::string& pattern = "%05d.png");
// Same matching rules; masks load single-channel.
std::vector<Tensor> load_mask_sequence(const std::string& dir, const std::string& pattern = "%05d.png");
void save_frame_sequence(const FrameSequence& seq, const std::string& dir,
                         const std::string& pattern = "%05d.png");

// A training clip: frames/ plus optional masks/ under one directory.
struct Clip {
    FrameSequence frames;
    std::vector<Tensor> masks; // empty when the clip has no annotations
    std::string name;
};
Clip load_clip(const std::string& clip_dir);

// ---- pairing and sampling ----
// foreground = original * binarized mask (threshold 0.5), broadcast over channels.
ForegroundPair make_foreground_pair(const Frame& original, const Tensor& mask);
// 0-based t with 1 <= t <= n-2.
ClipTriplet sample_triplet(const FrameSequence& seq, int t);

} // namespace retvi
