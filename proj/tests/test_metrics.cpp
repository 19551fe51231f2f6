#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "retvi/metrics.hpp"
#include "retvi/nn.hpp"
#include "test_util.hpp"

using namespace retvi;
using testutil::random_tensor;

namespace {

// Independent brute-force oracle for the bidirectional error, written as
// plain quadruple loops with no shared helpers.
double bidir_oracle(const Frame& fs, const Frame& ft, int patch, int stride) {
    auto positions = [&](const Frame& f) {
        std::vector<std::pair<int, int>> out;
        for (int y = 0; y + patch <= f.height(); y += stride)
            for (int x = 0; x + patch <= f.width(); x += stride) out.emplace_back(y, x);
        return out;
    };
    auto ssd = [&](const Frame& a, int ay, int ax, const Frame& b, int by, int bx) {
        double acc = 0.0;
        for (int c = 0; c < a.channels(); ++c)
            for (int dy = 0; dy < patch; ++dy)
                for (int dx = 0; dx < patch; ++dx) {
                    const double d =
                        a.pixels.at(c, ay + dy, ax + dx) - b.pixels.at(c, by + dy, bx + dx);
                    acc += d * d;
                }
        return acc;
    };
    const auto ps = positions(fs), pt = positions(ft);
    double total = 0.0;
    for (auto [y, x] : ps) {
        double best = std::numeric_limits<double>::infinity();
        for (auto [qy, qx] : pt) best = std::min(best, ssd(fs, y, x, ft, qy, qx));
        total += best;
    }
    for (auto [y, x] : pt) {
        double best = std::numeric_limits<double>::infinity();
        for (auto [qy, qx] : ps) best = std::min(best, ssd(ft, y, x, fs, qy, qx));
        total += best;
    }
    return total / static_cast<double>(ps.size() + pt.size());
}

Frame random_frame(int h, int w, Rng& rng) {
    return Frame(random_tensor({3, h, w}, rng, 0.0, 1.0));
}

} // namespace

TEST_CASE("patch_ssd") {
    Rng rng(1);
    Frame f = random_frame(8, 8, rng);
    Patch p{&f.pixels, 1, 2, 3};
    CHECK(patch_ssd(p, p) == 0.0);

    // 1x1 gray patches valued 0.2 and 0.5
    Tensor a = Tensor::full({1, 1, 1}, 0.2);
    Tensor b = Tensor::full({1, 1, 1}, 0.5);
    CHECK(patch_ssd({&a, 0, 0, 1}, {&b, 0, 0, 1}) == doctest::Approx(0.09));

    Frame g = random_frame(8, 8, rng);
    Patch q{&g.pixels, 0, 0, 3};
    CHECK(patch_ssd(p, q) == patch_ssd(q, p));

    Patch wrong{&g.pixels, 0, 0, 4};
    CHECK_THROWS_AS(patch_ssd(p, wrong), ShapeError);
}

TEST_CASE("bidirectional error equals itself on identical frames") {
    Rng rng(2);
    Frame f = random_frame(16, 16, rng);
    CHECK(bidirectional_error(f, f, {7, 4}) == 0.0);
}

TEST_CASE("bidirectional error matches the brute-force oracle") {
    Rng rng(3);
    SUBCASE("circular shift case") {
        Tensor t({3, 4, 4});
        double v = 0.01;
        for (std::int64_t i = 0; i < t.size(); ++i) t[i] = v += 0.013;
        Frame a(t);
        Tensor shifted({3, 4, 4});
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < 4; ++y)
                for (int x = 0; x < 4; ++x) shifted.at(c, y, x) = t.at(c, y, (x + 1) % 4);
        Frame b(shifted);
        PatchSpec spec{2, 1};
        const double got = bidirectional_error(a, b, spec);
        const double want = bidir_oracle(a, b, 2, 1);
        CHECK(got == doctest::Approx(want).epsilon(1e-12));
        CHECK(got > 0.0);
    }
    SUBCASE("random frames up to 32x32, mixed sizes") {
        for (int trial = 0; trial < 12; ++trial) {
            const int hs = rng.uniform_int(7, 32), ws = rng.uniform_int(7, 32);
            const int ht = rng.uniform_int(7, 32), wt = rng.uniform_int(7, 32);
            Frame a = random_frame(hs, ws, rng), b = random_frame(ht, wt, rng);
            const double got = bidirectional_error(a, b);
            const double want = bidir_oracle(a, b, 7, 4);
            CHECK(std::abs(got - want) <= 1e-9);
            CHECK(bidirectional_error(b, a) == doctest::Approx(got).epsilon(1e-12));
        }
    }
    SUBCASE("frame smaller than the patch throws") {
        Frame tiny = random_frame(4, 4, rng);
        CHECK_THROWS_AS(bidirectional_error(tiny, tiny, {7, 4}), DomainError);
    }
}

TEST_CASE("mean error aggregates per-frame values") {
    Rng rng(4);
    FrameSequence src, ret;
    for (int i = 0; i < 2; ++i) {
        src.frames.push_back(random_frame(12, 12, rng));
        ret.frames.push_back(random_frame(12, 12, rng));
    }
    PatchSpec spec{3, 2};
    const double e0 = bidirectional_error(src.frames[0], ret.frames[0], spec);
    const double e1 = bidirectional_error(src.frames[1], ret.frames[1], spec);
    BidirReport rep = mean_error(src, ret, spec);
    CHECK(rep.mean == doctest::Approx((e0 + e1) / 2.0).epsilon(1e-12));

    BidirReport self = mean_error(src, src, spec);
    CHECK(self.mean == 0.0);

    FrameSequence shorter;
    shorter.frames.push_back(src.frames[0]);
    CHECK_THROWS_AS(mean_error(src, shorter, spec), DimensionMismatchError);
}

TEST_CASE("frame difference") {
    Rng rng(5);
    Frame a = random_frame(8, 8, rng);
    CHECK(frame_difference(a, a) == 0.0);

    // 2x2 grayscale, one pixel differs by 100 steps on the 0-255 scale
    Tensor x({1, 2, 2}), y({1, 2, 2});
    y.at(0, 1, 1) = 100.0 / 255.0;
    CHECK(frame_difference(Frame(x), Frame(y)) == doctest::Approx(0.25).epsilon(1e-12));

    Frame b = random_frame(8, 8, rng);
    CHECK(frame_difference(a, b) == frame_difference(b, a));

    SUBCASE("triangle inequality") {
        Frame c = random_frame(8, 8, rng);
        CHECK(frame_difference(a, c) <=
              frame_difference(a, b) + frame_difference(b, c) + 1e-12);
    }
    SUBCASE("shape mismatch throws") {
        Frame small = random_frame(4, 4, rng);
        CHECK_THROWS_AS(frame_difference(a, small), ShapeError);
    }
}

TEST_CASE("stability") {
    Rng rng(6);
    SUBCASE("static video scores zero") {
        FrameSequence seq;
        Frame f = random_frame(10, 10, rng);
        for (int i = 0; i < 5; ++i) seq.frames.push_back(f);
        CHECK(stability(seq).stb == 0.0);
    }
    SUBCASE("engineered diffs average") {
        // uniform offsets of 20 and then 60 steps give D = 0.2 and 0.4
        FrameSequence seq;
        Tensor f0({1, 4, 4});
        Tensor f1 = Tensor::full({1, 4, 4}, 20.0 / 255.0);
        Tensor f2 = Tensor::full({1, 4, 4}, 60.0 / 255.0);
        seq.frames = {Frame(f0), Frame(f1), Frame(f2)};
        StabilityReport rep = stability(seq);
        REQUIRE(rep.step_differences.size() == 2);
        CHECK(rep.step_differences[0] == doctest::Approx(0.2).epsilon(1e-12));
        CHECK(rep.step_differences[1] == doctest::Approx(0.4).epsilon(1e-12));
        CHECK(rep.stb == doctest::Approx(0.3).epsilon(1e-12));
    }
    SUBCASE("time reversal invariance") {
        for (int trial = 0; trial < 5; ++trial) {
            FrameSequence seq;
            for (int i = 0; i < 6; ++i) seq.frames.push_back(random_frame(9, 9, rng));
            FrameSequence rev;
            rev.frames.assign(seq.frames.rbegin(), seq.frames.rend());
            CHECK(std::abs(stability(seq).stb - stability(rev).stb) <= 1e-12);
        }
    }
    SUBCASE("too short throws") {
        FrameSequence seq;
        seq.frames.push_back(random_frame(8, 8, rng));
        CHECK_THROWS_AS(stability(seq), DomainError);
    }
}
