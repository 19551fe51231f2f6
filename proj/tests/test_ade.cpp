#include "doctest.h"

#include <cmath>

#include "retvi/ade.hpp"
#include "test_util.hpp"

using namespace retvi;
using testutil::random_tensor;

TEST_CASE("grid_activation closed forms") {
    CHECK(grid_activation(Var::scalar(0.0)).item() == 0.0);
    const double a = 0.5 * std::log(3.0); // artanh(0.5)
    CHECK(grid_activation(Var::scalar(a)).item() == doctest::Approx(0.5).epsilon(1e-12));

    Rng rng(1);
    Tensor t = random_tensor({2, 4, 4}, rng, -3.0, 3.0);
    Var pos = grid_activation(Var::constant(t));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = -t[i];
    Var negv = grid_activation(Var::constant(t));
    for (std::int64_t i = 0; i < pos.size(); ++i)
        CHECK(negv.value()[i] == doctest::Approx(-pos.value()[i]).epsilon(1e-15));

    // identical to the rational exponential form
    for (double x : {-2.0, -0.3, 0.0, 0.7, 1.9}) {
        const double q = (1.0 - std::exp(-2.0 * x)) / (1.0 + std::exp(-2.0 * x));
        CHECK(grid_activation(Var::scalar(x)).item() == doctest::Approx(q).epsilon(1e-14));
    }
}

TEST_CASE("upsample_energy") {
    SUBCASE("constant field preserved at any size") {
        Var e = upsample_energy(Var::constant(Tensor::full({2, 16, 16}, 0.3)), 170, 301);
        for (std::int64_t i = 0; i < e.size(); ++i) CHECK(e.value()[i] == doctest::Approx(0.3));
    }
    SUBCASE("16x16 is the identity") {
        Rng rng(2);
        Tensor q = random_tensor({2, 16, 16}, rng);
        Var e = upsample_energy(Var::constant(q), 16, 16);
        CHECK(max_abs_diff(e.value(), q) == 0.0);
    }
    SUBCASE("corner impulse follows bilinear weights") {
        Tensor q({2, 16, 16});
        q.at(0, 0, 0) = 1.0;
        Var e = upsample_energy(Var::constant(q), 32, 32);
        const double f = 16.0 / 31.0; // first output step lands at 15/31 of a cell
        CHECK(e.value().at(0, 0, 0) == doctest::Approx(1.0));
        CHECK(e.value().at(0, 0, 1) == doctest::Approx(f).epsilon(1e-12));
        CHECK(e.value().at(0, 1, 0) == doctest::Approx(f).epsilon(1e-12));
        CHECK(e.value().at(0, 1, 1) == doctest::Approx(f * f).epsilon(1e-12));
        // range never exceeds the source extremes
        CHECK(max_abs(e.value()) <= 1.0);
    }
    SUBCASE("degenerate target throws") {
        CHECK_THROWS_AS(upsample_energy(Var::constant(Tensor({2, 16, 16})), 0, 8), ShapeError);
    }
}

TEST_CASE("flow_scale law") {
    CHECK(flow_scale(0.5, ResizeMode::Reduce) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(flow_scale(1.25, ResizeMode::Enlarge) == doctest::Approx(-0.0625).epsilon(1e-12));
    CHECK(flow_scale(1.0, ResizeMode::Reduce) == 0.0);
    CHECK(flow_scale(1.0, ResizeMode::Enlarge) == 0.0);
    CHECK_THROWS_AS(flow_scale(0.0, ResizeMode::Reduce), DomainError);
    CHECK_THROWS_AS(flow_scale(-0.5, ResizeMode::Reduce), DomainError);
}

TEST_CASE("build_deformation substitution and theta linearity") {
    Tensor e = Tensor::full({2, 4, 4}, 0.5);
    Var h1 = build_deformation(Var::constant(e), 0.25, 1.0);
    for (std::int64_t i = 0; i < h1.size(); ++i) CHECK(h1.value()[i] == 0.125);

    Var h2 = build_deformation(Var::constant(e), 0.25, 2.0);
    for (std::int64_t i = 0; i < h2.size(); ++i) CHECK(h2.value()[i] == 0.25);

    Var h0 = build_deformation(Var::constant(e), 0.0, 7.0);
    CHECK(max_abs(h0.value()) == 0.0);

    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor field = random_tensor({2, 6, 6}, rng, -0.999, 0.999);
        const double r = rng.uniform(0.25, 1.25);
        const double R = flow_scale(r, r > 1 ? ResizeMode::Enlarge : ResizeMode::Reduce);
        Var a = build_deformation(Var::constant(field), R, 2.0);
        Var b = mul_scalar(build_deformation(Var::constant(field), R, 1.0), 2.0);
        CHECK(max_abs_diff(a.value(), b.value()) == 0.0); // exact
    }
}

TEST_CASE("deformation magnitude stays below |R|*theta") {
    Rng rng(4);
    Tensor e = random_tensor({2, 8, 8}, rng, -0.999, 0.999);
    const double R = flow_scale(0.4, ResizeMode::Reduce);
    Var h = build_deformation(Var::constant(e), R, 1.5);
    CHECK(max_abs(h.value()) < std::abs(R) * 1.5);
}

TEST_CASE("crop_window arithmetic") {
    auto index_frame = [](int h, int w) {
        Tensor t({1, h, w});
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) t.at(0, y, x) = x;
        return Frame(std::move(t));
    };
    SUBCASE("1280 to 640 keeps columns [320,960)") {
        Frame out = crop_window(index_frame(16, 1280), 16, 640);
        CHECK(out.width() == 640);
        CHECK(out.pixels.at(0, 0, 0) == 320.0);
        CHECK(out.pixels.at(0, 0, 639) == 959.0);
    }
    SUBCASE("854 to 427 floors to columns [213,640)") {
        Frame out = crop_window(index_frame(16, 854), 16, 427);
        CHECK(out.pixels.at(0, 0, 0) == 213.0);
        CHECK(out.pixels.at(0, 0, 426) == 639.0);
    }
    SUBCASE("identity when target equals source") {
        Frame f = index_frame(16, 32);
        Frame out = crop_window(f, 16, 32);
        CHECK(max_abs_diff(out.pixels, f.pixels) == 0.0);
    }
    SUBCASE("target larger than source throws") {
        CHECK_THROWS_AS(crop_window(index_frame(16, 32), 16, 33), DomainError);
    }
}

TEST_CASE("retarget spec validation") {
    CHECK_THROWS_AS(RetargetSpec::from_ratio(0.0), DomainError);
    CHECK_THROWS_AS(RetargetSpec::from_ratio(0.5, RetargetAxis::Width, 0.5), DomainError);
    RetargetSpec bad;
    bad.ratio = 0.5;
    bad.mode = ResizeMode::Enlarge;
    CHECK_THROWS_AS(bad.validate(), DomainError);
    CHECK(RetargetSpec::from_ratio(1.25).mode == ResizeMode::Enlarge);
    // r = 1 is valid under either mode
    RetargetSpec unity = RetargetSpec::from_ratio(1.0);
    unity.mode = ResizeMode::Enlarge;
    unity.validate();
}

TEST_CASE("retarget identity at r = 1") {
    Rng rng(5);
    Cfa cfa(rng);
    Frame f(random_tensor({3, 48, 64}, rng, 0.0, 1.0));
    Frame out = retarget_frame(f, RetargetSpec::from_ratio(1.0), cfa);
    CHECK(out.height() == 48);
    CHECK(out.width() == 64);
    CHECK(max_abs_diff(out.pixels, f.pixels) <= 1.0 / 255.0);
}

TEST_CASE("retarget shapes for width and height axes") {
    Rng rng(6);
    Cfa cfa(rng);
    Frame f(random_tensor({3, 480, 854}, rng, 0.0, 1.0));
    Frame half = retarget_frame(f, RetargetSpec::from_ratio(0.5), cfa);
    CHECK(half.height() == 480);
    CHECK(half.width() == 427);

    Frame tall = retarget_frame(f, RetargetSpec::from_ratio(0.75, RetargetAxis::Height), cfa);
    CHECK(tall.height() == 360);
    CHECK(tall.width() == 854);

    Frame wide = retarget_frame(f, RetargetSpec::from_ratio(1.25), cfa);
    CHECK(wide.height() == 480);
    CHECK(wide.width() == 1068); // round(854 * 1.25)
}

TEST_CASE("theta scales the field exactly") {
    Rng rng(7);
    Cfa cfa(rng);
    Tensor frame = random_tensor({3, 40, 56}, rng, 0.0, 1.0);
    NoGradGuard ng;
    RetargetSpec s1 = RetargetSpec::from_ratio(0.5, RetargetAxis::Width, 1.0);
    RetargetSpec s2 = RetargetSpec::from_ratio(0.5, RetargetAxis::Width, 2.0);
    RetargetResult r1 = retarget_forward(Var::constant(frame), s1, cfa, false);
    RetargetResult r2 = retarget_forward(Var::constant(frame), s2, cfa, false);
    Tensor doubled = r1.field.value();
    for (std::int64_t i = 0; i < doubled.size(); ++i) doubled[i] *= 2.0;
    CHECK(max_abs_diff(r2.field.value(), doubled) == 0.0);
}

TEST_CASE("constant energy warps are pure translations") {
    Rng rng(8);
    Tensor frame = random_tensor({3, 12, 12}, rng, 0.0, 1.0);
    Tensor field({2, 12, 12});
    for (int y = 0; y < 12; ++y)
        for (int x = 0; x < 12; ++x) field.at(0, y, x) = 3.0; // pixel units
    Var out = deform_and_sample(Var::constant(frame), Var::constant(field));
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 12; ++y)
            for (int x = 0; x < 12; ++x)
                CHECK(out.value().at(c, y, x) ==
                      doctest::Approx(frame.at(c, y, std::min(x + 3, 11))));
}

TEST_CASE("energy heatmaps stay in range") {
    Rng rng(9);
    Tensor e = random_tensor({2, 10, 10}, rng, -0.99, 0.99);
    auto maps = energy_heatmaps(e);
    for (const Tensor& m : maps) {
        CHECK(m.height() == 10);
        for (std::int64_t i = 0; i < m.size(); ++i) {
            CHECK(m[i] >= 0.0);
            CHECK(m[i] <= 1.0);
        }
    }
}
