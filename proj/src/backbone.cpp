#include "retvi/backbone.hpp"

#include <cstdlib>
#include <filesystem>

#include "retvi/checkpoint.hpp"

namespace fs = std::filesystem;

namespace retvi {

namespace {
constexpr const char* kIdentity = "retvi-backbone-v1";
} // namespace

std::string backbone_cache_dir() {
    if (const char* env = std::getenv("RETVI_CACHE"); env && *env) return env;
    if (const char* home = std::getenv("HOME"); home && *home)
        return (fs::path(home) / ".cache" / "retvi").string();
    return ".retvi_cache";
}

Backbone::Backbone() : name_(kIdentity) {
    const fs::path cache = fs::path(backbone_cache_dir()) / (name_ + ".weights");

    std::vector<std::pair<std::string, Tensor>> tensors;
    bool loaded = false;
    if (fs::exists(cache)) {
        try {
            Checkpoint ckpt = load_checkpoint(cache.string());
            if (ckpt.header.count("identity") && ckpt.header.at("identity") == name_) {
                tensors = std::move(ckpt.tensors);
                loaded = true;
            }
        } catch (const Error&) {
            // fall through to regeneration
        }
    }
    if (!loaded) {
        Rng rng(fnv1a64(name_.data(), name_.size()));
        int cin = 3;
        for (int s = 0; s < kStages; ++s) {
            const int cout = kChannels[static_cast<size_t>(s)];
            tensors.emplace_back("stage" + std::to_string(s + 1) + ".weight",
                                 kaiming_uniform({cout, cin, 3, 3}, cin * 9, rng));
            tensors.emplace_back("stage" + std::to_string(s + 1) + ".bias",
                                 kaiming_uniform({cout}, cin * 9, rng));
            cin = cout;
        }
        tensors.emplace_back("fc.weight", kaiming_uniform({kNumClasses, cin}, cin, rng));
        tensors.emplace_back("fc.bias", Tensor({kNumClasses}));
        try {
            fs::create_directories(cache.parent_path());
            Checkpoint ckpt;
            ckpt.header["identity"] = name_;
            ckpt.tensors = tensors;
            save_checkpoint(ckpt, cache.string());
        } catch (const std::exception&) {
            // cache is best-effort; weights are deterministic either way
        }
    }

    checksum_ = tensors_checksum(tensors);

    auto take = [&](const std::string& key) -> Tensor {
        for (auto& [n, t] : tensors)
            if (n == key) return t;
        throw ParseError("backbone weights missing tensor " + key);
    };
    for (int s = 0; s < kStages; ++s) {
        Conv2d& c = convs_[static_cast<size_t>(s)];
        c.weight = Var::leaf(take("stage" + std::to_string(s + 1) + ".weight"), false);
        c.bias = Var::leaf(take("stage" + std::to_string(s + 1) + ".bias"), false);
        c.stride = 2;
        c.pad = 1;
    }
    fc_.weight = Var::leaf(take("fc.weight"), false);
    fc_.bias = Var::leaf(take("fc.bias"), false);
}

Backbone::Features Backbone::forward(const Var& frame) const {
    const Tensor& fv = frame.value();
    if (fv.ndim() != 3 || fv.channels() != 3)
        throw ShapeError("backbone: frame must be [3,H,W]");
    Var x = frame;
    if (fv.height() != kInputRes || fv.width() != kInputRes)
        x = bilinear_resize(x, kInputRes, kInputRes);

    Features f;
    for (int s = 0; s < kStages; ++s) {
        x = relu(convs_[static_cast<size_t>(s)](x));
        // emitted features are scaled toward pretrained-classifier
        // magnitudes; the chain itself stays unit-scale
        f.stages[static_cast<size_t>(s)] = mul_scalar(x, kFeatureScale);
    }
    // Global average pool then the class head.
    f.logits = fc_(channel_mean(x));
    return f;
}

} // namespace retvi
