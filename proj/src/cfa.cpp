#include "retvi/cfa.hpp"

namespace retvi {

namespace {
constexpr int kKappa[7] = {16, 32, 64, 128, 128, 128, 128};
constexpr int kStride[7] = {2, 2, 2, 2, 1, 1, 1};
constexpr int kGateChannels = 32;
} // namespace

Cfa::Cfa(Rng& rng) {
    int cin = 3;
    for (int i = 0; i < 7; ++i) {
        encoder.emplace_back(cin, kKappa[i], kStride[i], rng);
        cin = kKappa[i];
    }
    // Gates fire at i = 6, 5, 4; decoder channels grow by concatenation.
    gates.emplace_back(kKappa[5], kGateChannels, rng); // E6 with D7
    gates.emplace_back(kKappa[4], kGateChannels, rng); // E5 with D6
    gates.emplace_back(kKappa[3], kGateChannels, rng); // E4 with D5
    const int d7 = kKappa[6];
    const int d6 = kGateChannels + d7;
    const int d5 = kGateChannels + d6;
    const int d4 = kGateChannels + d5;
    d3 = DBlock(d4, 64, 1, rng);
    d2 = DBlock(64, 32, 1, rng);
    project = ConvTranspose2d(32, kOutChannels, 3, 1, 1, rng);
}

Var Cfa::forward(const Var& frame, bool training) {
    const Tensor& fv = frame.value();
    if (fv.ndim() != 3 || fv.channels() != 3) throw ShapeError("cfa: frame must be [3,H,W]");
    Var x = frame;
    if (fv.height() != kProcessingRes || fv.width() != kProcessingRes)
        x = bilinear_resize(x, kProcessingRes, kProcessingRes);

    std::vector<Var> e(7);
    for (int i = 0; i < 7; ++i) {
        x = encoder[static_cast<size_t>(i)](x, training);
        e[static_cast<size_t>(i)] = x;
    }

    Var d = e[6];                        // D7 = E7
    d = gates[0](e[5], d, training);     // D6
    d = gates[1](e[4], d, training);     // D5
    d = gates[2](e[3], d, training);     // D4
    d = d3(d, training);
    d = d2(d, training);
    Var d1 = project(d);                 // pre-activation, signed

    if (!all_finite(d1.value()))
        throw NumericalError("cfa: non-finite activation in D1");
    return d1;
}

void Cfa::collect(const std::string& prefix, ParamList& out) {
    for (size_t i = 0; i < encoder.size(); ++i)
        encoder[i].collect(prefix + ".e" + std::to_string(i + 1), out);
    const char* gate_names[3] = {".g6", ".g5", ".g4"};
    for (size_t i = 0; i < gates.size(); ++i)
        gates[i].collect(prefix + gate_names[i], out);
    d3.collect(prefix + ".d3", out);
    d2.collect(prefix + ".d2", out);
    project.collect(prefix + ".d1", out);
}

ParamList Cfa::params() {
    ParamList out;
    collect("cfa", out);
    return out;
}

} // namespace retvi
