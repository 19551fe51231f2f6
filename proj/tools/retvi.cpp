#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "retvi/metrics.hpp"
#include "retvi/trainer.hpp"

namespace fs = std::filesystem;
using namespace retvi;

namespace {

std::string frames_dir(const std::string& in) {
    const fs::path sub = fs::path(in) / "frames";
    return fs::is_directory(sub) ? sub.string() : in;
}

void write_done_marker(const std::string& out_dir, size_t frame_count,
                       const std::string& config_repr) {
    std::ofstream done(fs::path(out_dir) / "DONE");
    done << "frames=" << frame_count << "\n";
    std::ostringstream hex;
    hex << std::hex << fnv1a64(config_repr.data(), config_repr.size());
    done << "config_hash=" << hex.str() << "\n";
}

TrainConfig config_from_checkpoint(const Checkpoint& ckpt) {
    TrainConfig cfg;
    auto get = [&](const char* key, auto&& parse) {
        if (ckpt.header.count(key)) parse(ckpt.header.at(key));
    };
    get("config.batch_size", [&](const std::string& v) { cfg.batch_size = std::stoi(v); });
    get("config.epochs", [&](const std::string& v) { cfg.epochs = std::stoi(v); });
    get("config.learning_rate", [&](const std::string& v) { cfg.learning_rate = std::stod(v); });
    get("config.ratio_min", [&](const std::string& v) { cfg.ratio_min = std::stod(v); });
    get("config.ratio_max", [&](const std::string& v) { cfg.ratio_max = std::stod(v); });
    get("config.seed", [&](const std::string& v) { cfg.seed = std::stoull(v); });
    get("config.max_steps", [&](const std::string& v) { cfg.max_steps = std::stoi(v); });
    get("config.lambda_c", [&](const std::string& v) { cfg.weights.lambda_c = std::stod(v); });
    get("config.lambda_g", [&](const std::string& v) { cfg.weights.lambda_g = std::stod(v); });
    get("config.lambda_t", [&](const std::string& v) { cfg.weights.lambda_t = std::stod(v); });
    get("config.lambda_f", [&](const std::string& v) { cfg.weights.lambda_f = std::stod(v); });
    return cfg;
}

// Loads CFA weights (and the rest of the trainer state) from a checkpoint.
std::unique_ptr<Trainer> trainer_from_checkpoint(const std::string& path) {
    if (path.empty()) throw ConfigError("a checkpoint is required (--ckpt)");
    if (!fs::exists(path)) throw ConfigError("checkpoint not found: " + path);
    Checkpoint ckpt = load_checkpoint(path);
    auto trainer = std::make_unique<Trainer>(config_from_checkpoint(ckpt));
    LoadReport report = trainer->restore(ckpt);
    if (report.backbone_mismatch) std::cerr << "warning: " << report.message << "\n";
    return trainer;
}

struct RetargetArgs {
    std::string in, out, ckpt;
    double ratio = 0.0;
    int target_w = 0, target_h = 0;
    double theta = 1.0;
    std::string axis = "width";
};

int cmd_retarget(const RetargetArgs& a, const std::string& config_repr) {
    const bool has_ratio = a.ratio > 0.0;
    const bool has_size = a.target_w > 0 || a.target_h > 0;
    if (has_ratio == has_size)
        throw ConfigError("give exactly one of --ratio or a target size");
    if (a.theta < 1.0) throw ConfigError("--theta must be >= 1");

    auto trainer = trainer_from_checkpoint(a.ckpt);
    FrameSequence seq = load_frame_sequence(frames_dir(a.in));
    const int sh = seq.frames.front().height(), sw = seq.frames.front().width();

    FrameSequence out;
    out.fps = seq.fps;
    double total_s = 0.0;
    for (size_t i = 0; i < seq.frames.size(); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        Frame result;
        if (has_ratio) {
            const RetargetAxis axis =
                a.axis == "height" ? RetargetAxis::Height : RetargetAxis::Width;
            result = retarget_frame(seq.frames[i], RetargetSpec::from_ratio(a.ratio, axis, a.theta),
                                    trainer->cfa());
        } else if (a.target_w > 0 && a.target_h > 0) {
            result = retarget_frame_to_size(seq.frames[i], a.target_h, a.target_w, a.theta,
                                            trainer->cfa());
        } else if (a.target_w > 0) {
            result = retarget_frame(
                seq.frames[i],
                RetargetSpec::from_ratio(static_cast<double>(a.target_w) / sw,
                                         RetargetAxis::Width, a.theta),
                trainer->cfa());
        } else {
            result = retarget_frame(
                seq.frames[i],
                RetargetSpec::from_ratio(static_cast<double>(a.target_h) / sh,
                                         RetargetAxis::Height, a.theta),
                trainer->cfa());
        }
        const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        total_s += dt;
        std::cout << "frame " << i << ": " << result.width() << "x" << result.height() << " in "
                  << dt << " s\n";
        out.frames.push_back(std::move(result));
    }
    save_frame_sequence(out, (fs::path(a.out) / "frames").string());
    write_done_marker(a.out, out.frames.size(), config_repr);
    std::cout << "retargeted " << out.frames.size() << " frames in " << total_s << " s ("
              << total_s / static_cast<double>(out.frames.size()) << " s/frame)\n";
    return 0;
}

struct TrainArgs {
    std::string data, out, resume;
    int epochs = 150;
    int batch = 2;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    int max_steps = 0;
    double ratio_min = 0.25, ratio_max = 1.25;
};

int cmd_train(const TrainArgs& a, const std::string& config_repr) {
    if (!fs::is_directory(a.data)) throw NotFoundError("dataset root not found: " + a.data);
    std::vector<Clip> clips;
    for (const auto& entry : fs::directory_iterator(a.data))
        if (entry.is_directory() && fs::is_directory(entry.path() / "frames"))
            clips.push_back(load_clip(entry.path().string()));
    if (clips.empty()) throw EmptyDatasetError("no clips under " + a.data);

    TrainConfig cfg;
    cfg.batch_size = a.batch;
    cfg.epochs = a.epochs;
    cfg.learning_rate = a.lr;
    cfg.seed = a.seed;
    cfg.max_steps = a.max_steps;
    cfg.ratio_min = a.ratio_min;
    cfg.ratio_max = a.ratio_max;

    std::unique_ptr<Trainer> trainer;
    if (!a.resume.empty()) {
        Checkpoint mid = load_checkpoint(a.resume);
        TrainConfig resumed = config_from_checkpoint(mid);
        resumed.epochs = cfg.epochs;
        resumed.max_steps = cfg.max_steps;
        trainer = std::make_unique<Trainer>(resumed);
        LoadReport rep = trainer->restore(mid);
        if (rep.backbone_mismatch) std::cerr << "warning: " << rep.message << "\n";
    } else {
        trainer = std::make_unique<Trainer>(cfg);
    }

    fs::create_directories(a.out);
    std::ofstream log(fs::path(a.out) / "train.log");
    struct Tee : std::streambuf {
        std::streambuf *a, *b;
        int overflow(int c) override {
            if (c != EOF) {
                a->sputc(static_cast<char>(c));
                b->sputc(static_cast<char>(c));
            }
            return c;
        }
    } tee;
    tee.a = log.rdbuf();
    tee.b = std::cout.rdbuf();
    std::ostream both(&tee);

    Checkpoint final_ckpt = trainer->fit(clips, &both, a.out);
    save_checkpoint(final_ckpt, (fs::path(a.out) / "final.ckpt").string());
    write_done_marker(a.out, 0, config_repr);
    std::cout << "trained " << trainer->global_step() << " steps; checkpoint at " << a.out
              << "/final.ckpt\n";
    return 0;
}

struct EvalArgs {
    std::string src, ret, in, out;
    std::string metric = "both";
    int patch_size = 7, patch_stride = 4;
};

int cmd_eval(const EvalArgs& a) {
    std::ostringstream report;
    const bool want_me = a.metric == "me" || a.metric == "both";
    const bool want_stb = a.metric == "stb" || a.metric == "both";
    if (a.metric != "me" && a.metric != "stb" && a.metric != "both")
        throw ConfigError("--metric must be me, stb or both");

    if (want_me && !a.src.empty() && !a.ret.empty()) {
        FrameSequence src = load_frame_sequence(frames_dir(a.src));
        FrameSequence ret = load_frame_sequence(frames_dir(a.ret));
        PatchSpec spec{a.patch_size, a.patch_stride};
        write_bidir_report(report, mean_error(src, ret, spec));
    } else if (want_me && a.metric == "me") {
        throw ConfigError("M_E needs --src and --ret");
    }
    if (want_stb) {
        const std::string dir = !a.in.empty() ? a.in : a.ret;
        if (dir.empty()) throw ConfigError("STB needs --in (or --ret)");
        write_stability_report(report, stability(load_frame_sequence(frames_dir(dir))));
    }

    std::cout << report.str();
    if (!a.out.empty()) {
        std::ofstream f(a.out);
        f << report.str();
    }
    return 0;
}

struct VizArgs {
    std::string in, out, ckpt;
};

int cmd_energy_viz(const VizArgs& a, const std::string& config_repr) {
    auto trainer = trainer_from_checkpoint(a.ckpt);
    FrameSequence seq = load_frame_sequence(frames_dir(a.in));
    const fs::path dir = fs::path(a.out) / "energy";
    fs::create_directories(dir);

    char name[32];
    for (size_t i = 0; i < seq.frames.size(); ++i) {
        NoGradGuard ng;
        const Frame& f = seq.frames[i];
        Var d1 = trainer->cfa().forward(Var::constant(f.pixels), false);
        Var e = upsample_energy(grid_activation(d1), f.height(), f.width());
        auto maps = energy_heatmaps(e.value());
        const char* tags[3] = {"x", "y", "mag"};
        for (int m = 0; m < 3; ++m) {
            std::snprintf(name, sizeof name, "%05zu_%s.png", i, tags[m]);
            write_png((dir / name).string(), maps[static_cast<size_t>(m)]);
        }
    }
    write_done_marker(a.out, seq.frames.size(), config_repr);
    std::cout << "wrote energy maps for " << seq.frames.size() << " frames\n";
    return 0;
}

int classify_exit(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const DomainError*>(&e)) return 2;
    if (dynamic_cast<const NumericalError*>(&e)) return 4;
    if (dynamic_cast<const Error*>(&e)) return 3;
    return 2;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"RETVI content-aware video retargeting"};
    app.set_config("--config");
    app.require_subcommand(1);
    app.fallthrough();

    std::uint64_t seed = 0;
    app.add_option("--seed", seed, "RNG seed for randomized behavior");

    RetargetArgs ra;
    CLI::App* retarget = app.add_subcommand("retarget", "Resize a frame sequence");
    retarget->add_option("--in", ra.in, "input clip directory")->required();
    retarget->add_option("--out", ra.out, "output directory")->required();
    retarget->add_option("--ckpt", ra.ckpt, "trained checkpoint")->required();
    retarget->add_option("--ratio", ra.ratio, "target/source ratio on the chosen axis");
    retarget->add_option("--target-width", ra.target_w, "target width in pixels");
    retarget->add_option("--target-height", ra.target_h, "target height in pixels");
    retarget->add_option("--theta", ra.theta, "tall-video deformation multiplier (>= 1)");
    retarget->add_option("--axis", ra.axis, "width|height (with --ratio)")
        ->check(CLI::IsMember({"width", "height"}));

    TrainArgs ta;
    CLI::App* train = app.add_subcommand("train", "Train on clips with foreground masks");
    train->add_option("--data", ta.data, "dataset root of clip directories")->required();
    train->add_option("--out", ta.out, "output directory for checkpoints and log")->required();
    train->add_option("--epochs", ta.epochs, "training epochs");
    train->add_option("--batch", ta.batch, "triplets per step");
    train->add_option("--lr", ta.lr, "learning rate");
    train->add_option("--max-steps", ta.max_steps, "hard cap on optimization steps");
    train->add_option("--ratio-min", ta.ratio_min, "ratio range lower bound");
    train->add_option("--ratio-max", ta.ratio_max, "ratio range upper bound");
    train->add_option("--resume", ta.resume, "checkpoint to resume from");

    EvalArgs ea;
    CLI::App* eval = app.add_subcommand("eval", "Quality and stability metrics");
    eval->add_option("--src", ea.src, "source frames (for M_E)");
    eval->add_option("--ret", ea.ret, "retargeted frames (for M_E)");
    eval->add_option("--in", ea.in, "sequence for STB");
    eval->add_option("--out", ea.out, "report file (default stdout)");
    eval->add_option("--metric", ea.metric, "me|stb|both");
    eval->add_option("--patch-size", ea.patch_size, "bidirectional similarity patch size");
    eval->add_option("--patch-stride", ea.patch_stride, "bidirectional similarity stride");

    VizArgs va;
    CLI::App* viz = app.add_subcommand("energy-viz", "Export energy-map heatmaps");
    viz->add_option("--in", va.in, "input clip directory")->required();
    viz->add_option("--out", va.out, "output directory")->required();
    viz->add_option("--ckpt", va.ckpt, "checkpoint")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    std::ostringstream repr;
    for (int i = 1; i < argc; ++i) repr << argv[i] << ";";

    try {
        ta.seed = seed;
        if (retarget->parsed()) return cmd_retarget(ra, repr.str());
        if (train->parsed()) return cmd_train(ta, repr.str());
        if (eval->parsed()) return cmd_eval(ea);
        if (viz->parsed()) return cmd_energy_viz(va, repr.str());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return classify_exit(e);
    }
    return 2;
}
