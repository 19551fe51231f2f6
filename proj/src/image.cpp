#include "retvi/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>

namespace fs = std::filesystem;

namespace retvi {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

} // namespace

Tensor read_png(const std::string& path, int force_channels) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw NotFoundError("cannot open " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ParseError("libpng init failed for " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ParseError("corrupt PNG: " + path);
    }

    png_init_io(png, fp.get());
    png_read_info(png, info);

    const png_byte color = png_get_color_type(png, info);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8)
        png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    if (force_channels == 3 && (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA))
        png_set_gray_to_rgb(png);
    if (force_channels == 1 && (color & PNG_COLOR_MASK_COLOR))
        png_set_rgb_to_gray(png, 1, -1.0, -1.0);
    png_read_update_info(png, info);

    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int ch = static_cast<int>(png_get_channels(png, info));

    std::vector<png_byte> rowbuf(static_cast<size_t>(png_get_rowbytes(png, info)));
    Tensor out({ch, h, w});
    for (int y = 0; y < h; ++y) {
        png_read_row(png, rowbuf.data(), nullptr);
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < ch; ++c)
                out.at(c, y, x) = rowbuf[static_cast<size_t>(x) * ch + c] / 255.0;
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

void write_png(const std::string& path, const Tensor& raster) {
    if (raster.ndim() != 3 || (raster.channels() != 1 && raster.channels() != 3))
        throw ShapeError("write_png: raster must be 1 or 3 channels");
    const int ch = raster.channels(), h = raster.height(), w = raster.width();

    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw NotFoundError("cannot write " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw ParseError("libpng init failed for " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw ParseError("PNG write failed: " + path);
    }

    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 ch == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<png_byte> rowbuf(static_cast<size_t>(w) * ch);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < ch; ++c) {
                const double v = std::min(std::max(raster.at(c, y, x), 0.0), 1.0);
                rowbuf[static_cast<size_t>(x) * ch + c] =
                    static_cast<png_byte>(std::lround(v * 255.0));
            }
        png_write_row(png, rowbuf.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

namespace {

// Splits "%05d.png" into prefix/suffix around the numeric token.
struct Pattern {
    std::string prefix, suffix;
};

Pattern parse_pattern(const std::string& pattern) {
    const size_t pos = pattern.find('%');
    if (pos == std::string::npos) throw DomainError("pattern has no % token: " + pattern);
    size_t end = pos + 1;
    while (end < pattern.size() && (std::isdigit(static_cast<unsigned char>(pattern[end])) != 0))
        ++end;
    if (end >= pattern.size() || pattern[end] != 'd')
        throw DomainError("pattern token must be %<width>d: " + pattern);
    return {pattern.substr(0, pos), pattern.substr(end + 1)};
}

// name -> numeric index if it matches the template.
std::optional<long> match_index(const std::string& name, const Pattern& p) {
    if (name.size() <= p.prefix.size() + p.suffix.size()) return std::nullopt;
    if (name.compare(0, p.prefix.size(), p.prefix) != 0) return std::nullopt;
    if (name.compare(name.size() - p.suffix.size(), p.suffix.size(), p.suffix) != 0)
        return std::nullopt;
    const std::string mid =
        name.substr(p.prefix.size(), name.size() - p.prefix.size() - p.suffix.size());
    if (mid.empty() || !std::all_of(mid.begin(), mid.end(), [](unsigned char c) {
            return std::isdigit(c) != 0;
        }))
        return std::nullopt;
    return std::stol(mid);
}

std::map<long, fs::path> list_matches(const std::string& dir, const std::string& pattern) {
    if (!fs::is_directory(dir)) throw NotFoundError("no such directory: " + dir);
    const Pattern p = parse_pattern(pattern);
    std::map<long, fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        if (auto idx = match_index(entry.path().filename().string(), p))
            files[*idx] = entry.path();
    }
    if (files.empty()) throw EmptySequenceError("no files matching " + pattern + " in " + dir);
    return files;
}

} // namespace

FrameSequence load_frame_sequence(const std::string& dir, const std::string& pattern) {
    FrameSequence seq;
    for (const auto& [idx, path] : list_matches(dir, pattern)) {
        Frame f(read_png(path.string(), 3));
        if (f.height() < 16 || f.width() < 16)
            throw DomainError("frames must be at least 16x16: " + path.string());
        if (!seq.frames.empty() && !f.same_size(seq.frames.front()))
            throw DimensionMismatchError("mixed frame dimensions in " + dir);
        seq.frames.push_back(std::move(f));
    }
    return seq;
}

std::vector<Tensor> load_mask_sequence(const std::string& dir, const std::string& pattern) {
    std::vector<Tensor> masks;
    for (const auto& [idx, path] : list_matches(dir, pattern)) {
        Tensor m = read_png(path.string(), 1);
        if (!masks.empty() && !m.same_shape(masks.front()))
            throw DimensionMismatchError("mixed mask dimensions in " + dir);
        masks.push_back(std::move(m));
    }
    return masks;
}

void save_frame_sequence(const FrameSequence& seq, const std::string& dir,
                         const std::string& pattern) {
    fs::create_directories(dir);
    const Pattern p = parse_pattern(pattern);
    size_t width = 0;
    for (size_t i = p.prefix.size() + 1; i < pattern.size() && pattern[i] != 'd'; ++i) ++width;
    for (size_t i = 0; i < seq.frames.size(); ++i) {
        std::string num = std::to_string(i);
        if (num.size() < width) num.insert(0, width - num.size(), '0');
        write_png((fs::path(dir) / (p.prefix + num + p.suffix)).string(), seq.frames[i].pixels);
    }
}

Clip load_clip(const std::string& clip_dir) {
    Clip clip;
    clip.name = fs::path(clip_dir).filename().string();
    clip.frames = load_frame_sequence((fs::path(clip_dir) / "frames").string());
    const fs::path masks = fs::path(clip_dir) / "masks";
    if (fs::is_directory(masks)) {
        clip.masks = load_mask_sequence(masks.string());
        if (clip.masks.size() != clip.frames.size())
            throw DimensionMismatchError("frame/mask count mismatch in " + clip_dir);
        if (clip.masks.front().height() != clip.frames.frames.front().height() ||
            clip.masks.front().width() != clip.frames.frames.front().width())
            throw DimensionMismatchError("frame/mask size mismatch in " + clip_dir);
    }
    return clip;
}

ForegroundPair make_foreground_pair(const Frame& original, const Tensor& mask) {
    if (mask.ndim() != 3 || mask.channels() != 1 || mask.height() != original.height() ||
        mask.width() != original.width())
        throw DimensionMismatchError("mask dimensions must equal frame dimensions");
    Frame fg(Tensor(original.pixels.shape()));
    for (int c = 0; c < original.channels(); ++c)
        for (int y = 0; y < original.height(); ++y)
            for (int x = 0; x < original.width(); ++x)
                fg.pixels.at(c, y, x) =
                    mask.at(0, y, x) >= 0.5 ? original.pixels.at(c, y, x) : 0.0;
    return {original, std::move(fg)};
}

ClipTriplet sample_triplet(const FrameSequence& seq, int t) {
    const int n = static_cast<int>(seq.frames.size());
    if (t < 1 || t > n - 2)
        throw OutOfRangeError("triplet index " + std::to_string(t) + " out of range for " +
                              std::to_string(n) + " frames");
    return {seq.frames[static_cast<size_t>(t) - 1], seq.frames[static_cast<size_t>(t)],
            seq.frames[static_cast<size_t>(t) + 1]};
}

} // namespace retvi
