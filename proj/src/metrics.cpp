#include "retvi/metrics.hpp"

#include <cmath>
#include <limits>
#include <ostream>

namespace retvi {

double patch_ssd(const Patch& p, const Patch& q) {
    if (!p.raster || !q.raster) throw ShapeError("patch_ssd: null patch");
    if (p.size != q.size) throw ShapeError("patch_ssd: patch sizes differ");
    if (p.raster->channels() != q.raster->channels())
        throw ShapeError("patch_ssd: channel counts differ");
    double acc = 0.0;
    for (int c = 0; c < p.raster->channels(); ++c)
        for (int dy = 0; dy < p.size; ++dy)
            for (int dx = 0; dx < p.size; ++dx) {
                const double d =
                    p.raster->at(c, p.y + dy, p.x + dx) - q.raster->at(c, q.y + dy, q.x + dx);
                acc += d * d;
            }
    return acc;
}

namespace {

std::vector<Patch> enumerate_patches(const Frame& f, const PatchSpec& spec) {
    std::vector<Patch> out;
    for (int y = 0; y + spec.patch_size <= f.height(); y += spec.stride)
        for (int x = 0; x + spec.patch_size <= f.width(); x += spec.stride)
            out.push_back({&f.pixels, y, x, spec.patch_size});
    return out;
}

double directed_sum(const std::vector<Patch>& from, const std::vector<Patch>& to) {
    double total = 0.0;
    for (const Patch& p : from) {
        double best = std::numeric_limits<double>::infinity();
        for (const Patch& q : to) best = std::min(best, patch_ssd(p, q));
        total += best;
    }
    return total;
}

} // namespace

double bidirectional_error(const Frame& fs, const Frame& ft, const PatchSpec& spec) {
    spec.validate();
    if (fs.height() < spec.patch_size || fs.width() < spec.patch_size ||
        ft.height() < spec.patch_size || ft.width() < spec.patch_size)
        throw DomainError("bidirectional_error: frame smaller than a patch");
    const auto ps = enumerate_patches(fs, spec);
    const auto pt = enumerate_patches(ft, spec);
    const double n = static_cast<double>(ps.size() + pt.size());
    return (directed_sum(ps, pt) + directed_sum(pt, ps)) / n;
}

BidirReport mean_error(const FrameSequence& src, const FrameSequence& ret,
                       const PatchSpec& spec) {
    if (src.size() != ret.size())
        throw DimensionMismatchError("mean_error: sequences differ in frame count");
    if (src.size() == 0) throw EmptySequenceError("mean_error: empty sequences");
    BidirReport report;
    double acc = 0.0;
    for (size_t k = 0; k < src.size(); ++k) {
        const double e = bidirectional_error(src.frames[k], ret.frames[k], spec);
        report.per_frame.push_back(e);
        acc += e;
    }
    report.mean = acc / static_cast<double>(src.size());
    return report;
}

double frame_difference(const Frame& a, const Frame& b) {
    if (!a.same_size(b) || a.channels() != b.channels())
        throw ShapeError("frame_difference: frames differ in shape");
    const int C = a.channels(), H = a.height(), W = a.width();
    double acc = 0.0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double px = 0.0;
            for (int c = 0; c < C; ++c)
                px += std::abs(a.pixels.at(c, y, x) - b.pixels.at(c, y, x)) * 255.0;
            acc += px / C;
        }
    return acc / (static_cast<double>(H) * W) / 100.0;
}

StabilityReport stability(const FrameSequence& seq) {
    const size_t n = seq.size();
    if (n < 2) throw DomainError("stability: needs at least two frames");
    StabilityReport report;
    double acc = 0.0;
    for (size_t t = 1; t < n; ++t) {
        const double d = frame_difference(seq.frames[t], seq.frames[t - 1]);
        report.step_differences.push_back(d);
        acc += d;
    }
    report.stb = acc / static_cast<double>(n - 1);
    return report;
}

void write_bidir_report(std::ostream& os, const BidirReport& report) {
    for (size_t k = 0; k < report.per_frame.size(); ++k)
        os << "frame=" << k << " E=" << report.per_frame[k] << "\n";
    os << "M_E=" << report.mean << "\n";
}

void write_stability_report(std::ostream& os, const StabilityReport& report) {
    for (size_t t = 0; t < report.step_differences.size(); ++t)
        os << "step=" << (t + 1) << " D=" << report.step_differences[t] << "\n";
    os << "STB=" << report.stb << "\n";
}

} // namespace retvi
