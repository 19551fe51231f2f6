#pragma once

#include <iosfwd>
#include <optional>

#include "retvi/ade.hpp"
#include "retvi/checkpoint.hpp"
#include "retvi/losses.hpp"

namespace retvi {

struct TrainConfig {
    int batch_size = 2;   // triplets per step
    int epochs = 150;
    double learning_rate = 1e-3;
    double ratio_min = 0.25;
    double ratio_max = 1.25;
    std::uint64_t seed = 0;
    int processing_resolution = 256; // pinned by the CFA stride plan
    int max_steps = 0;               // 0 = run all epochs
    LossWeights weights;

    void validate() const;
};

struct RatioDraw {
    double r;
    ResizeMode mode;
};
// Uniform draw from [lo, hi]; reduce below 1, enlarge above 1.
RatioDraw sample_ratio(Rng& rng, double lo, double hi);

// Three consecutive frames with their masks, referencing a loaded clip.
struct TripletSample {
    std::array<const Frame*, 3> frames{};
    std::array<const Tensor*, 3> masks{};
};

struct StepMetrics {
    double l_cri = 0, l_glo = 0, l_tem = 0, l_fid = 0, total = 0;
    double d_loss = 0;
    std::vector<double> ratios;
};

struct LoadReport {
    bool backbone_mismatch = false;
    std::string message;
};

class Trainer {
public:
    explicit Trainer(TrainConfig cfg);

    // One discriminator update followed by one generator update.
    StepMetrics train_step(const std::vector<TripletSample>& batch);

    // Runs epochs x steps over the dataset with uniform random triplet
    // sampling; writes one structured log line per step; checkpoints at
    // epoch boundaries when ckpt_dir is given. Returns the final state.
    Checkpoint fit(const std::vector<Clip>& dataset, std::ostream* log = nullptr,
                   const std::string& ckpt_dir = "");

    Checkpoint make_checkpoint() const;
    // Restores weights, optimizer moments, counters and the RNG stream.
    // Reports (rather than fails on) a backbone identity mismatch.
    LoadReport restore(const Checkpoint& ckpt);

    Cfa& cfa() { return cfa_; }
    FidDisc& disc() { return disc_; }
    const Backbone& backbone() const { return backbone_; }
    Rng& rng() { return rng_; }
    const TrainConfig& config() const { return config_; }
    long global_step() const { return global_step_; }
    int epoch() const { return epoch_; }

private:
    TrainConfig config_;
    Rng rng_;
    Backbone backbone_;
    Cfa cfa_;
    FidDisc disc_;
    ParamList cfa_params_, disc_params_;
    Adam gen_opt_, disc_opt_;
    long global_step_ = 0;
    int epoch_ = 0;
};

void write_log_line(std::ostream& os, long step, int epoch, const StepMetrics& m);

} // namespace retvi
