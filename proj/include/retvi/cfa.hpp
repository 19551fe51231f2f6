#pragma once

#include "retvi/nn.hpp"

namespace retvi {

// Encoder block: Conv3x3 -> Normalization -> Tanh.
class EBlock {
public:
    EBlock() = default;
    EBlock(int cin, int kernels, int stride, Rng& rng)
        : conv(cin, kernels, 3, stride, 1, rng), norm(kernels) {}
    Var operator()(const Var& x, bool training) { return tanh_op(norm(conv(x), training)); }
    void collect(const std::string& prefix, ParamList& out) {
        conv.collect(prefix + ".conv", out);
        norm.collect(prefix + ".norm", out);
    }

    Conv2d conv;
    BatchNorm2d norm;
};

// Decoder block: transposed Conv3x3 -> Normalization -> ReLU. Output
// padding makes a stride-s block scale the spatial size by exactly s.
class DBlock {
public:
    DBlock() = default;
    DBlock(int cin, int cout, int stride, Rng& rng)
        : convt(cin, cout, 3, stride, 1, rng, stride - 1), norm(cout) {}
    Var operator()(const Var& x, bool training) { return relu(norm(convt(x), training)); }
    void collect(const std::string& prefix, ParamList& out) {
        convt.collect(prefix + ".convt", out);
        norm.collect(prefix + ".norm", out);
    }

    ConvTranspose2d convt;
    BatchNorm2d norm;
};

// Skip-connection gate: CBR on the encoder features, concatenated with the
// decoder features.
class EdGate {
public:
    EdGate() = default;
    EdGate(int c_enc, int c_cbr, Rng& rng) : cbr(c_enc, c_cbr, 1, rng) {}
    Var operator()(const Var& f_enc, const Var& f_dec, bool training) {
        if (f_enc.value().height() != f_dec.value().height() ||
            f_enc.value().width() != f_dec.value().width())
            throw ShapeError("ed_gate: encoder/decoder spatial dims differ");
        return concat_channels(cbr(f_enc, training), f_dec);
    }
    void collect(const std::string& prefix, ParamList& out) { cbr.collect(prefix + ".cbr", out); }

    CbrBlock cbr;
};

// Content feature analyzer. Frames are resized to the 256x256 processing
// resolution; seven E-Blocks reduce to 16x16, the gated decoder returns the
// two-channel pre-activation map D1.
class Cfa {
public:
    static constexpr int kProcessingRes = 256;
    static constexpr int kGridRes = 16;
    static constexpr int kOutChannels = 2;

    Cfa() = default;
    explicit Cfa(Rng& rng);

    // frame: [3,H,W] any size; returns [2,16,16].
    Var forward(const Var& frame, bool training);

    void collect(const std::string& prefix, ParamList& out);
    ParamList params();

    // kappa = (16,32,64,128,128,128,128), strides (2,2,2,2,1,1,1)
    std::vector<EBlock> encoder;
    std::vector<EdGate> gates; // at skip connections i = 6,5,4
    DBlock d3, d2;
    ConvTranspose2d project; // final 2-channel projection, no activation
};

} // namespace retvi
