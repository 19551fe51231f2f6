#pragma once

#include "retvi/backbone.hpp"
#include "retvi/image.hpp"

namespace retvi {

struct LossWeights {
    double lambda_c = 1.0;
    double lambda_g = 1.0;
    double lambda_t = 1.0;
    double lambda_f = 1.0;
};

// Lightweight fidelity discriminator: six CBR blocks (stride 2) followed by
// a 64-channel fully-connected hidden layer and a squashed scalar score.
class FidDisc {
public:
    static constexpr int kInputRes = 224;
    static constexpr double kEps = 1e-7;

    FidDisc() = default;
    explicit FidDisc(Rng& rng);

    // Score in (0,1), eps-clamped; resizes the frame to 224 internally.
    Var score(const Var& frame, bool training);

    void collect(const std::string& prefix, ParamList& out);
    ParamList params();

    std::vector<CbrBlock> blocks;
    Linear hidden, head;
};

// Sum over the four backbone stages of ||Phi_i(ve) - Phi_i(re)||^2 / (C H W).
// Both frames pass through the backbone at its input resolution.
Var critical_region_loss(const Var& ve, const Var& re, const Backbone& bb);

// ||P(x_o) - P(x_r)||^2 on softmaxed classifier logits; in [0,2].
Var global_integrity_loss(const Var& vo, const Var& ro, const Backbone& bb);

// Per-stage triple-product correlation gamma, compared between the source
// and retargeted triplets.
Var temporal_gamma(const std::array<Var, 3>& triplet, const Backbone& bb, int stage);
Var temporal_consistency_loss(const std::array<Var, 3>& src, const std::array<Var, 3>& ret,
                              const Backbone& bb);

struct FidelityLosses {
    Var d_loss; // 1/2 (bce(D(vo),1) + bce(D(ro),0))
    Var g_term; // bce(D(ro),1), the generator's slot in the total loss
};
FidelityLosses fidelity_losses(const Var& vo, const Var& ro, FidDisc& disc, bool training);

Var total_loss(const Var& l_cri, const Var& l_glo, const Var& l_tem, const Var& l_fid,
               const LossWeights& w);

} // namespace retvi
