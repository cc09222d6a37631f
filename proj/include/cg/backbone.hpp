#pragma once

#include <vector>

#include "cg/rng.hpp"
#include "cg/tensor.hpp"

namespace cg {

// Patch-routed low-rank expert mixture over a small convolutional pyramid.

struct MoEConfig {
    int experts = 8;
    int top_k = 2;
    int patch = 2;      // routing patch side; 0 routes the whole map as one patch
    int rank = 4;       // adapter rank
    int cascades = 2;   // stacked block count
    double temperature = 0.1;
};

// Channel bottleneck gate plus a 7x7 spatial gate over mean||max pooled maps.
struct DaaParams {
    Tensor cw1, cb1, cw2, cb2;
    Tensor sw, sb;
};
DaaParams make_daa_params(int channels, Rng& rng);
Tensor daa_lite(const Tensor& x, const DaaParams& p);

struct ExpertParams {
    Tensor conv_w, conv_b;     // shared 3x3 transform, applied ungated
    std::vector<Tensor> down;  // per-expert [C,r]
    std::vector<Tensor> up;    // per-expert [r,C]
    Tensor prototypes;         // [N_e,C]; rows re-normalized after optimizer steps
    Tensor lora_scale;         // learnable scalar on the routed delta
};
ExpertParams make_expert_params(int channels, const MoEConfig& cfg, Rng& rng);
void renormalize_prototypes(ExpertParams& p);

// Shared transform plus this expert's scaled low-rank delta, per location.
Tensor expert_apply(const Tensor& x, int e, const ExpertParams& p);

struct GateSet {
    Tensor weights;            // [rows, K]; softmax over the selected scores
    Tensor full_probs;         // [rows, N_e]; dense softmax for routing stats
    std::vector<int> indices;  // rows*K selected experts, descending score
};

// Cosine scores against unit prototypes, sharpened by 1/temperature. A zero
// summary row ties every score and falls to the lowest-index experts with
// uniform weights. Passing frozen indices skips re-selection (used to hold
// routing fixed under finite-difference probes).
GateSet cosine_topk_gate(const Tensor& pbar, const Tensor& prototypes, int k, double temperature,
                         const std::vector<int>* frozen = nullptr);

struct RoutingStats {
    std::vector<double> fraction;  // per-expert share of selections, 1/K each
    Tensor mean_prob;              // [N_e] mean dense softmax, graph-connected
    double entropy() const;
};

// N_e * sum_e fraction_e * mean_prob_e; 1 at uniform routing, N_e at collapse.
Tensor load_balance_loss(const RoutingStats& stats, int n_experts);

struct PlmoeBlockParams {
    DaaParams daa;
    ExpertParams experts;
};
PlmoeBlockParams make_plmoe_block_params(int channels, const MoEConfig& cfg, Rng& rng);

// plan: nullptr -> free routing; empty -> record selection; sized -> reuse it.
Tensor plmoe_block(const Tensor& x, const MoEConfig& cfg, const PlmoeBlockParams& p,
                   RoutingStats* stats = nullptr, std::vector<int>* plan = nullptr);

struct BackboneParams {
    Tensor stem_w1, stem_b1;  // 3 -> 16, stride 2
    Tensor stem_w2, stem_b2;  // 16 -> 24, stride 2
    Tensor stem_w3, stem_b3;  // 24 -> C, stride 2
    std::vector<PlmoeBlockParams> blocks;
    Tensor down_w, down_b;    // C -> C, stride 2
};
BackboneParams make_backbone_params(int channels, const MoEConfig& cfg, Rng& rng);

struct Pyramid {
    Tensor f8, f16;
    std::vector<RoutingStats> stats;  // one per cascade block
};

// Image must be divisible by 16 on both sides; maps come out at strides 8, 16.
Pyramid build_pyramid(const Tensor& image, const MoEConfig& cfg, const BackboneParams& p,
                      std::vector<std::vector<int>>* plans = nullptr);

}  // namespace cg
