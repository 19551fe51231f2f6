#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "retvi/trainer.hpp"
#include "test_util.hpp"

using namespace retvi;
namespace fs = std::filesystem;

namespace {

// Moving bright square over a gradient background, with the square as mask.
Clip synthetic_clip(int n_frames, int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    Clip clip;
    clip.name = "synthetic" + std::to_string(seed);
    const int side = std::max(4, h / 4);
    for (int t = 0; t < n_frames; ++t) {
        Tensor px({3, h, w});
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    px.at(c, y, x) = 0.2 + 0.3 * x / w + 0.1 * y / h + 0.05 * c;
        Tensor mask({1, h, w});
        const int ox = (t * 2) % std::max(1, w - side);
        const int oy = h / 3;
        for (int y = oy; y < std::min(h, oy + side); ++y)
            for (int x = ox; x < std::min(w, ox + side); ++x) {
                mask.at(0, y, x) = 1.0;
                for (int c = 0; c < 3; ++c) px.at(c, y, x) = 0.9 - 0.2 * c;
            }
        for (std::int64_t i = 0; i < px.size(); ++i)
            px[i] = std::min(1.0, std::max(0.0, px[i] + rng.uniform(-0.02, 0.02)));
        clip.frames.frames.emplace_back(std::move(px));
        clip.masks.push_back(std::move(mask));
    }
    return clip;
}

std::vector<TripletSample> first_batch(const Clip& clip, int batch) {
    std::vector<TripletSample> out;
    for (int b = 0; b < batch; ++b) {
        TripletSample s;
        const int t = 1 + b;
        for (int k = 0; k < 3; ++k) {
            s.frames[static_cast<size_t>(k)] = &clip.frames.frames[static_cast<size_t>(t - 1 + k)];
            s.masks[static_cast<size_t>(k)] = &clip.masks[static_cast<size_t>(t - 1 + k)];
        }
        out.push_back(s);
    }
    return out;
}

TrainConfig toy_config(std::uint64_t seed, int batch = 1) {
    TrainConfig cfg;
    cfg.batch_size = batch;
    cfg.epochs = 1;
    cfg.seed = seed;
    return cfg;
}

} // namespace

TEST_CASE("sample_ratio distribution and modes") {
    Rng rng(99);
    double acc = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        RatioDraw d = sample_ratio(rng, 0.25, 1.25);
        CHECK(d.r >= 0.25);
        CHECK(d.r <= 1.25);
        if (d.r < 1.0) CHECK(d.mode == ResizeMode::Reduce);
        if (d.r > 1.0) CHECK(d.mode == ResizeMode::Enlarge);
        acc += d.r;
    }
    CHECK(std::abs(acc / n - 0.75) < 0.01);

    RatioDraw unity = sample_ratio(rng, 1.0, 1.0);
    CHECK(unity.r == 1.0);
    CHECK(flow_scale(unity.r, unity.mode) == 0.0);

    CHECK(sample_ratio(rng, 0.5, 0.5).r == 0.5);
    CHECK_THROWS_AS(sample_ratio(rng, -1.0, 1.0), DomainError);
}

TEST_CASE("config validation") {
    TrainConfig cfg;
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), DomainError);
    cfg = TrainConfig{};
    cfg.processing_resolution = 128;
    CHECK_THROWS_AS(cfg.validate(), DomainError);
    cfg = TrainConfig{};
    cfg.ratio_min = 2.0; // above max
    CHECK_THROWS_AS(cfg.validate(), DomainError);
}

TEST_CASE("train_step is deterministic under a fixed seed") {
    Clip clip = synthetic_clip(6, 32, 32, 1);
    auto batch = first_batch(clip, 1);

    Trainer a(toy_config(7));
    Trainer b(toy_config(7));
    StepMetrics ma = a.train_step(batch);
    StepMetrics mb = b.train_step(batch);
    CHECK(ma.total == mb.total);
    CHECK(ma.l_cri == mb.l_cri);
    CHECK(ma.l_glo == mb.l_glo);
    CHECK(ma.l_tem == mb.l_tem);
    CHECK(ma.l_fid == mb.l_fid);
    CHECK(ma.d_loss == mb.d_loss);
    REQUIRE(ma.ratios.size() == 1);
    CHECK(ma.ratios[0] == mb.ratios[0]);
    CHECK(ma.total > 0.0);
}

TEST_CASE("zero loss weights leave generator parameters unchanged") {
    Clip clip = synthetic_clip(5, 32, 32, 2);
    TrainConfig cfg = toy_config(3);
    cfg.weights = {0.0, 0.0, 0.0, 0.0};
    Trainer tr(cfg);

    // learnable parameters must not move; BN running statistics may
    std::vector<Tensor> before;
    for (const auto& p : tr.cfa().params())
        if (p.trainable) before.push_back(p.var.value());
    tr.train_step(first_batch(clip, 1));
    size_t i = 0;
    for (const auto& p : tr.cfa().params())
        if (p.trainable) CHECK(max_abs_diff(p.var.value(), before[i++]) == 0.0);
}

TEST_CASE("generator gradient matches finite differences and Adam steps against it") {
    Clip clip = synthetic_clip(5, 32, 32, 4);
    Trainer tr(toy_config(11));
    const TripletSample sample = first_batch(clip, 1)[0];
    const RetargetSpec spec = RetargetSpec::from_ratio(0.7);

    auto gen_loss = [&]() {
        const Frame& vo_c = *sample.frames[1];
        std::array<Var, 3> src, ret;
        std::array<RetargetResult, 3> rr;
        for (int k = 0; k < 3; ++k) {
            src[static_cast<size_t>(k)] = Var::constant(sample.frames[static_cast<size_t>(k)]->pixels);
            rr[static_cast<size_t>(k)] =
                retarget_forward(src[static_cast<size_t>(k)], spec, tr.cfa(), true);
            ret[static_cast<size_t>(k)] = rr[static_cast<size_t>(k)].output;
        }
        ForegroundPair pair = make_foreground_pair(vo_c, *sample.masks[1]);
        Var ve = Var::constant(pair.foreground.pixels);
        Var re = deform_and_sample(ve, rr[1].field, vo_c.width(), vo_c.height());
        Var l = total_loss(critical_region_loss(ve, re, tr.backbone()),
                           global_integrity_loss(src[1], rr[1].output, tr.backbone()),
                           temporal_consistency_loss(src, ret, tr.backbone()),
                           bce(tr.disc().score(rr[1].output, true), 1.0, FidDisc::kEps),
                           tr.config().weights);
        return l;
    };

    Var loss = gen_loss();
    loss.backward();

    // The composite is piecewise smooth (bilinear warp), so central
    // differences validate the descent DIRECTION of the probed weights.
    Var probe = tr.cfa().encoder[0].conv.weight;
    Rng rng(5);
    int informative = 0, agreeing = 0;
    for (int p = 0; p < 10; ++p) {
        const std::int64_t idx = rng.uniform_int(0, static_cast<int>(probe.size()) - 1);
        const double ad = probe.grad()[idx];
        Tensor& wt = probe.mutable_value();
        const double orig = wt[idx];
        const double step = 1e-5;
        wt[idx] = orig + step;
        double fp;
        {
            NoGradGuard ng;
            fp = gen_loss().item();
        }
        wt[idx] = orig - step;
        double fm;
        {
            NoGradGuard ng;
            fm = gen_loss().item();
        }
        wt[idx] = orig;
        const double fd = (fp - fm) / (2.0 * step);
        if (std::abs(fd) > 1e-4 && std::abs(ad) > 1e-4) {
            ++informative;
            if (ad * fd > 0.0) ++agreeing;
        }
    }
    CHECK(informative >= 3);
    CHECK(agreeing == informative);

    // one Adam step from zero moments moves each weight against its gradient
    ParamList single;
    single.push_back({"probe", probe, true});
    Adam opt(single, 1e-3);
    Tensor before = probe.value();
    opt.step();
    int moved = 0;
    for (std::int64_t i = 0; i < probe.size(); ++i) {
        const double g = probe.grad()[i];
        const double delta = probe.value()[i] - before[i];
        if (std::abs(g) > 1e-12) {
            CHECK(delta * g <= 0.0);
            ++moved;
        }
    }
    CHECK(moved > 0);
}

TEST_CASE("checkpoint round trip is exact") {
    Trainer tr(toy_config(21));
    Checkpoint ckpt = tr.make_checkpoint();
    const fs::path path = fs::temp_directory_path() / "retvi_ckpt_roundtrip.ckpt";
    save_checkpoint(ckpt, path.string());
    Checkpoint back = load_checkpoint(path.string());

    REQUIRE(back.tensors.size() == ckpt.tensors.size());
    for (size_t i = 0; i < ckpt.tensors.size(); ++i) {
        CHECK(back.tensors[i].first == ckpt.tensors[i].first);
        CHECK(max_abs_diff(back.tensors[i].second, ckpt.tensors[i].second) == 0.0);
    }
    CHECK(back.header == ckpt.header);

    // save -> load -> save is bytewise stable
    const fs::path path2 = fs::temp_directory_path() / "retvi_ckpt_roundtrip2.ckpt";
    save_checkpoint(back, path2.string());
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), {});
    std::string s2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(s1 == s2);
    fs::remove(path);
    fs::remove(path2);
}

TEST_CASE("checkpoint error paths") {
    Trainer tr(toy_config(22));
    const fs::path path = fs::temp_directory_path() / "retvi_ckpt_err.ckpt";
    save_checkpoint(tr.make_checkpoint(), path.string());

    SUBCASE("truncated file") {
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), {});
        in.close();
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
        out.close();
        CHECK_THROWS_AS(load_checkpoint(path.string()), ParseError);
    }
    SUBCASE("version mismatch") {
        std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
        f.seekp(4);
        const std::uint32_t bad = 99;
        f.write(reinterpret_cast<const char*>(&bad), 4);
        f.close();
        CHECK_THROWS_AS(load_checkpoint(path.string()), IncompatibleCheckpointError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_checkpoint("/nonexistent/retvi.ckpt"), NotFoundError);
    }
    fs::remove(path);
}

TEST_CASE("restore surfaces a backbone checksum mismatch as a warning") {
    Trainer tr(toy_config(23));
    Checkpoint ckpt = tr.make_checkpoint();
    CHECK_FALSE(tr.restore(ckpt).backbone_mismatch);
    ckpt.header["backbone.checksum"] = "deadbeef";
    LoadReport report = tr.restore(ckpt);
    CHECK(report.backbone_mismatch);
    CHECK_FALSE(report.message.empty());
}

TEST_CASE("fit with zero epochs returns the initial weights") {
    std::vector<Clip> data;
    data.push_back(synthetic_clip(5, 32, 32, 6));
    TrainConfig cfg = toy_config(31);
    cfg.epochs = 0;
    Trainer tr(cfg);
    Checkpoint initial = tr.make_checkpoint();
    std::ostringstream log;
    Checkpoint out = tr.fit(data, &log);
    CHECK(log.str().empty());
    REQUIRE(out.tensors.size() == initial.tensors.size());
    for (size_t i = 0; i < out.tensors.size(); ++i)
        CHECK(max_abs_diff(out.tensors[i].second, initial.tensors[i].second) == 0.0);
}

TEST_CASE("fit rejects unusable datasets") {
    Trainer tr(toy_config(32));
    std::vector<Clip> empty;
    CHECK_THROWS_AS(tr.fit(empty), EmptyDatasetError);

    std::vector<Clip> no_masks;
    no_masks.push_back(synthetic_clip(5, 32, 32, 7));
    no_masks[0].masks.clear();
    CHECK_THROWS_AS(tr.fit(no_masks), EmptyDatasetError);

    std::vector<Clip> too_short;
    too_short.push_back(synthetic_clip(2, 32, 32, 8));
    CHECK_THROWS_AS(tr.fit(too_short), EmptyDatasetError);
}

TEST_CASE("resume reproduces the uninterrupted trajectory exactly") {
    std::vector<Clip> data;
    data.push_back(synthetic_clip(6, 32, 32, 9));
    data.push_back(synthetic_clip(6, 32, 32, 10));

    TrainConfig cfg = toy_config(41);
    cfg.max_steps = 4;

    // uninterrupted run
    Trainer full(cfg);
    std::ostringstream full_log;
    full.fit(data, &full_log);

    // interrupted at step 2, then resumed
    TrainConfig half_cfg = cfg;
    half_cfg.max_steps = 2;
    Trainer first(half_cfg);
    std::ostringstream log_a;
    Checkpoint mid = first.fit(data, &log_a);

    Trainer second(cfg);
    LoadReport rep = second.restore(mid);
    CHECK_FALSE(rep.backbone_mismatch);
    std::ostringstream log_b;
    second.fit(data, &log_b);

    std::istringstream full_lines(full_log.str());
    std::istringstream ab_lines(log_a.str() + log_b.str());
    std::string lf, lab;
    int lines = 0;
    while (std::getline(full_lines, lf)) {
        REQUIRE(std::getline(ab_lines, lab));
        CHECK(lf == lab);
        ++lines;
    }
    CHECK(lines == 4);
}
