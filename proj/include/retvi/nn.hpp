#pragma once

#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "retvi/autograd.hpp"

namespace retvi {

// Deterministic RNG shared by init, data sampling and ratio draws.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(engine_);
    }
    int uniform_int(int lo, int hi) { // inclusive bounds
        return std::uniform_int_distribution<int>(lo, hi)(engine_);
    }

    std::string state() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }
    void set_state(const std::string& s) {
        std::istringstream is(s);
        is >> engine_;
    }

private:
    std::mt19937_64 engine_;
};

// Named parameter or buffer; buffers (running stats) are not trainable.
struct ParamRef {
    std::string name;
    Var var;
    bool trainable = true;
};
using ParamList = std::vector<ParamRef>;

Tensor kaiming_uniform(std::vector<int> shape, int fan_in, Rng& rng);

// Scales trainable gradients so their global L2 norm is at most max_norm.
// The randomized resize ratio makes gradient magnitudes vary by orders of
// magnitude between steps; clipping keeps the adaptive moments calibrated.
void clip_grad_norm(ParamList& params, double max_norm);

class Conv2d {
public:
    Conv2d() = default;
    Conv2d(int cin, int cout, int k, int stride, int pad, Rng& rng);
    Var operator()(const Var& x) const { return conv2d(x, weight, bias, stride, pad); }
    void collect(const std::string& prefix, ParamList& out);

    Var weight, bias;
    int stride = 1, pad = 1;
};

class ConvTranspose2d {
public:
    ConvTranspose2d() = default;
    ConvTranspose2d(int cin, int cout, int k, int stride, int pad, Rng& rng,
                    int output_padding = 0);
    Var operator()(const Var& x) const {
        return conv_transpose2d(x, weight, bias, stride, pad, output_padding);
    }
    void collect(const std::string& prefix, ParamList& out);

    Var weight, bias;
    int stride = 1, pad = 1, output_padding = 0;
};

class BatchNorm2d {
public:
    BatchNorm2d() = default;
    explicit BatchNorm2d(int channels);
    // Batch statistics in training mode (one frame per forward), running
    // statistics in eval mode.
    Var operator()(const Var& x, bool training);
    void collect(const std::string& prefix, ParamList& out);

    Var gamma, beta;
    Var running_mean, running_var; // buffers
    double momentum = 0.1;
    double eps = 1e-5;
};

class Linear {
public:
    Linear() = default;
    Linear(int in, int out, Rng& rng);
    Var operator()(const Var& x) const { return linear(x, weight, bias); }
    void collect(const std::string& prefix, ParamList& out);

    Var weight, bias;
};

// Conv3x3 -> Normalization -> ReLU, the block shared by the skip gates and
// the fidelity discriminator.
class CbrBlock {
public:
    CbrBlock() = default;
    CbrBlock(int cin, int cout, int stride, Rng& rng);
    Var operator()(const Var& x, bool training);
    void collect(const std::string& prefix, ParamList& out);

    Conv2d conv;
    BatchNorm2d norm;
};

// First-order adaptive-moment optimizer over the trainable entries of a
// ParamList.
class Adam {
public:
    Adam() = default;
    Adam(const ParamList& params, double lr, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8);

    void step();
    void zero_grad();

    // Moment tensors exposed for checkpointing, parallel to trainable params.
    struct Slot {
        std::string name;
        Tensor m, v;
    };
    std::vector<Slot>& slots() { return slots_; }
    long step_count() const { return t_; }
    void set_step_count(long t) { t_ = t; }

private:
    std::vector<Var> params_;
    std::vector<Slot> slots_;
    double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    long t_ = 0;
};

} // namespace retvi
