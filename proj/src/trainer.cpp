#include "retvi/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <ostream>
#include <sstream>

namespace retvi {

void TrainConfig::validate() const {
    if (batch_size < 1) throw DomainError("batch_size must be >= 1");
    if (epochs < 0) throw DomainError("epochs must be >= 0");
    if (!(learning_rate > 0.0)) throw DomainError("learning_rate must be positive");
    if (!(ratio_min > 0.0) || !(ratio_max > 0.0) || ratio_min > ratio_max)
        throw DomainError("ratio range must be positive with min <= max");
    if (processing_resolution != Cfa::kProcessingRes)
        throw DomainError("processing_resolution is fixed at " +
                          std::to_string(Cfa::kProcessingRes) + " by the encoder stride plan");
}

RatioDraw sample_ratio(Rng& rng, double lo, double hi) {
    if (!(lo > 0.0) || lo > hi) throw DomainError("invalid ratio range");
    const double r = rng.uniform(lo, hi);
    return {r, r > 1.0 ? ResizeMode::Enlarge : ResizeMode::Reduce};
}

namespace {
// The discriminator can separate real frames from cropped warps almost
// unconditionally, so it learns on a slower schedule to keep the
// adversarial game in balance.
constexpr double kDiscLrFactor = 0.001;
constexpr double kGradClipNorm = 1.0;
} // namespace

Trainer::Trainer(TrainConfig cfg) : config_(cfg), rng_(cfg.seed) {
    config_.validate();
    cfa_ = Cfa(rng_);
    disc_ = FidDisc(rng_);
    cfa_params_ = cfa_.params();
    disc_params_ = disc_.params();
    gen_opt_ = Adam(cfa_params_, config_.learning_rate);
    disc_opt_ = Adam(disc_params_, config_.learning_rate * kDiscLrFactor);
}

StepMetrics Trainer::train_step(const std::vector<TripletSample>& batch) {
    if (batch.empty()) throw EmptyDatasetError("train_step: empty batch");
    const double inv_b = 1.0 / static_cast<double>(batch.size());

    StepMetrics metrics;
    std::vector<RetargetSpec> specs;
    specs.reserve(batch.size());
    for (size_t i = 0; i < batch.size(); ++i) {
        const RatioDraw draw = sample_ratio(rng_, config_.ratio_min, config_.ratio_max);
        RetargetSpec spec;
        spec.ratio = draw.r;
        spec.mode = draw.mode;
        spec.theta = 1.0;
        specs.push_back(spec);
        metrics.ratios.push_back(draw.r);
    }

    // Discriminator update: generator outputs enter as constants.
    disc_opt_.zero_grad();
    for (size_t i = 0; i < batch.size(); ++i) {
        const Frame& vo = *batch[i].frames[1];
        Tensor retargeted;
        {
            NoGradGuard ng;
            retargeted =
                retarget_forward(Var::constant(vo.pixels), specs[i], cfa_, true).output.value();
        }
        FidelityLosses fl = fidelity_losses(Var::constant(vo.pixels),
                                            Var::constant(std::move(retargeted)), disc_, true);
        metrics.d_loss += fl.d_loss.item() * inv_b;
        mul_scalar(fl.d_loss, inv_b).backward();
    }
    clip_grad_norm(disc_params_, kGradClipNorm);
    disc_opt_.step();

    // Generator update against the refreshed discriminator.
    gen_opt_.zero_grad();
    for (size_t i = 0; i < batch.size(); ++i) {
        const TripletSample& sample = batch[i];
        const Frame& vo_c = *sample.frames[1];
        const int H = vo_c.height(), W = vo_c.width();

        std::array<RetargetResult, 3> rr;
        std::array<Var, 3> src_vars, ret_outputs;
        for (int k = 0; k < 3; ++k) {
            src_vars[static_cast<size_t>(k)] = Var::constant(sample.frames[static_cast<size_t>(k)]->pixels);
            rr[static_cast<size_t>(k)] =
                retarget_forward(src_vars[static_cast<size_t>(k)], specs[i], cfa_, true);
            ret_outputs[static_cast<size_t>(k)] = rr[static_cast<size_t>(k)].output;
        }

        const ForegroundPair pair = make_foreground_pair(vo_c, *sample.masks[1]);
        Var ve = Var::constant(pair.foreground.pixels);
        Var re_full = deform_and_sample(ve, rr[1].field, W, H);

        Var l_cri = critical_region_loss(ve, re_full, backbone_);
        Var l_glo = global_integrity_loss(src_vars[1], rr[1].output, backbone_);
        Var l_tem = temporal_consistency_loss(src_vars, ret_outputs, backbone_);
        Var g_term = bce(disc_.score(rr[1].output, true), 1.0, FidDisc::kEps);

        const double vals[4] = {l_cri.item(), l_glo.item(), l_tem.item(), g_term.item()};
        const char* names[4] = {"l_cri", "l_glo", "l_tem", "l_fid"};
        for (int k = 0; k < 4; ++k)
            if (!std::isfinite(vals[k]))
                throw NumericalError(std::string("non-finite loss component ") + names[k]);

        metrics.l_cri += vals[0] * inv_b;
        metrics.l_glo += vals[1] * inv_b;
        metrics.l_tem += vals[2] * inv_b;
        metrics.l_fid += vals[3] * inv_b;

        Var total = total_loss(l_cri, l_glo, l_tem, g_term, config_.weights);
        metrics.total += total.item() * inv_b;
        mul_scalar(total, inv_b).backward();
    }
    clip_grad_norm(cfa_params_, kGradClipNorm);
    gen_opt_.step();

    ++global_step_;
    return metrics;
}

Checkpoint Trainer::fit(const std::vector<Clip>& dataset, std::ostream* log,
                        const std::string& ckpt_dir) {
    std::vector<size_t> eligible;
    std::int64_t positions = 0;
    for (size_t i = 0; i < dataset.size(); ++i) {
        const auto& clip = dataset[i];
        if (clip.frames.size() >= 3 && clip.masks.size() == clip.frames.size()) {
            eligible.push_back(i);
            positions += static_cast<std::int64_t>(clip.frames.size()) - 2;
        }
    }
    if (eligible.empty())
        throw EmptyDatasetError("fit: no clip with >= 3 frames and matching masks");

    const long steps_per_epoch = static_cast<long>(
        std::max<std::int64_t>(1, (positions + config_.batch_size - 1) / config_.batch_size));

    auto sample_batch = [&]() {
        std::vector<TripletSample> batch;
        for (int b = 0; b < config_.batch_size; ++b) {
            const Clip& clip =
                dataset[eligible[static_cast<size_t>(rng_.uniform_int(0, static_cast<int>(eligible.size()) - 1))]];
            const int n = static_cast<int>(clip.frames.size());
            const int t = rng_.uniform_int(1, n - 2);
            TripletSample s;
            for (int k = 0; k < 3; ++k) {
                s.frames[static_cast<size_t>(k)] = &clip.frames.frames[static_cast<size_t>(t - 1 + k)];
                s.masks[static_cast<size_t>(k)] = &clip.masks[static_cast<size_t>(t - 1 + k)];
            }
            batch.push_back(s);
        }
        return batch;
    };

    const bool step_capped = config_.max_steps > 0;
    while (step_capped ? global_step_ < config_.max_steps : epoch_ < config_.epochs) {
        StepMetrics m = train_step(sample_batch());
        if (log) write_log_line(*log, global_step_, epoch_, m);
        if (global_step_ % steps_per_epoch == 0) {
            ++epoch_;
            if (!ckpt_dir.empty()) {
                std::filesystem::create_directories(ckpt_dir);
                save_checkpoint(make_checkpoint(),
                                (std::filesystem::path(ckpt_dir) / "last.ckpt").string());
            }
        }
    }
    return make_checkpoint();
}

namespace {

std::string to_hex(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << v;
    return os.str();
}

} // namespace

Checkpoint Trainer::make_checkpoint() const {
    Checkpoint ckpt;
    ckpt.header["kind"] = "retvi-checkpoint";
    ckpt.header["epoch"] = std::to_string(epoch_);
    ckpt.header["global_step"] = std::to_string(global_step_);
    ckpt.header["backbone.name"] = backbone_.name();
    ckpt.header["backbone.checksum"] = to_hex(backbone_.checksum());
    ckpt.header["rng.state"] = rng_.state();
    ckpt.header["adam_gen.t"] = std::to_string(gen_opt_.step_count());
    ckpt.header["adam_disc.t"] = std::to_string(disc_opt_.step_count());
    ckpt.header["config.batch_size"] = std::to_string(config_.batch_size);
    ckpt.header["config.epochs"] = std::to_string(config_.epochs);
    ckpt.header["config.learning_rate"] = std::to_string(config_.learning_rate);
    ckpt.header["config.ratio_min"] = std::to_string(config_.ratio_min);
    ckpt.header["config.ratio_max"] = std::to_string(config_.ratio_max);
    ckpt.header["config.seed"] = std::to_string(config_.seed);
    ckpt.header["config.processing_resolution"] = std::to_string(config_.processing_resolution);
    ckpt.header["config.max_steps"] = std::to_string(config_.max_steps);
    ckpt.header["config.lambda_c"] = std::to_string(config_.weights.lambda_c);
    ckpt.header["config.lambda_g"] = std::to_string(config_.weights.lambda_g);
    ckpt.header["config.lambda_t"] = std::to_string(config_.weights.lambda_t);
    ckpt.header["config.lambda_f"] = std::to_string(config_.weights.lambda_f);

    for (const ParamList* list : {&cfa_params_, &disc_params_})
        for (const ParamRef& p : *list) ckpt.tensors.emplace_back(p.name, p.var.value());
    for (const auto* opt : {&gen_opt_, &disc_opt_}) {
        const std::string tag = opt == &gen_opt_ ? "adam_gen." : "adam_disc.";
        for (const auto& slot : const_cast<Adam*>(opt)->slots()) {
            ckpt.tensors.emplace_back(tag + slot.name + ".m", slot.m);
            ckpt.tensors.emplace_back(tag + slot.name + ".v", slot.v);
        }
    }
    return ckpt;
}

LoadReport Trainer::restore(const Checkpoint& ckpt) {
    if (!ckpt.header.count("kind") || ckpt.header.at("kind") != "retvi-checkpoint")
        throw IncompatibleCheckpointError("not a trainer checkpoint");

    auto apply = [&](ParamList& params) {
        for (ParamRef& p : params) {
            const Tensor* t = ckpt.find(p.name);
            if (!t) throw IncompatibleCheckpointError("checkpoint missing tensor " + p.name);
            if (!t->same_shape(p.var.value()))
                throw IncompatibleCheckpointError("checkpoint shape mismatch for " + p.name);
            p.var.mutable_value() = *t;
        }
    };
    apply(cfa_params_);
    apply(disc_params_);

    auto apply_opt = [&](Adam& opt, const std::string& tag) {
        for (auto& slot : opt.slots()) {
            const Tensor* m = ckpt.find(tag + slot.name + ".m");
            const Tensor* v = ckpt.find(tag + slot.name + ".v");
            if (!m || !v)
                throw IncompatibleCheckpointError("checkpoint missing optimizer state for " +
                                                  slot.name);
            slot.m = *m;
            slot.v = *v;
        }
    };
    apply_opt(gen_opt_, "adam_gen.");
    apply_opt(disc_opt_, "adam_disc.");

    if (ckpt.header.count("adam_gen.t"))
        gen_opt_.set_step_count(std::stol(ckpt.header.at("adam_gen.t")));
    if (ckpt.header.count("adam_disc.t"))
        disc_opt_.set_step_count(std::stol(ckpt.header.at("adam_disc.t")));
    if (ckpt.header.count("rng.state")) rng_.set_state(ckpt.header.at("rng.state"));
    if (ckpt.header.count("epoch")) epoch_ = std::stoi(ckpt.header.at("epoch"));
    if (ckpt.header.count("global_step")) global_step_ = std::stol(ckpt.header.at("global_step"));

    LoadReport report;
    if (ckpt.header.count("backbone.checksum") &&
        ckpt.header.at("backbone.checksum") != to_hex(backbone_.checksum())) {
        report.backbone_mismatch = true;
        report.message = "checkpoint was trained against backbone checksum " +
                         ckpt.header.at("backbone.checksum") + ", current is " +
                         to_hex(backbone_.checksum());
    }
    return report;
}

void write_log_line(std::ostream& os, long step, int epoch, const StepMetrics& m) {
    os << "step=" << step << " epoch=" << epoch << " l_cri=" << m.l_cri << " l_glo=" << m.l_glo
       << " l_tem=" << m.l_tem << " l_fid=" << m.l_fid << " total=" << m.total
       << " d_loss=" << m.d_loss << " r=";
    for (size_t i = 0; i < m.ratios.size(); ++i) os << (i ? "," : "") << m.ratios[i];
    os << "\n";
}

} // namespace retvi
