#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cg/backbone.hpp"
#include "cg/fusion.hpp"
#include "cg/heads.hpp"
#include "cg/text.hpp"

namespace cg {

// The full grounding network: expert-routed pyramid, text-guided fusion at
// both levels, and the scoring/box/grid heads.

struct ModelConfig {
    int channels = 32;
    int text_dim = kTextDim;
    MoEConfig moe;
    FusionConfig fusion;
    HeadsConfig heads;
};

struct Model {
    ModelConfig cfg;
    BackboneParams backbone;
    FusionParams fuse8, fuse16;
    RegionEmbedParams embed8, embed16;
    BoxHeadParams box8, box16;
    Calibration cal;      // shared logit scale/bias across levels
    Tensor aux_w, aux_b;  // grid classifier on the fused stride-16 map
};

Model make_model(const ModelConfig& cfg, Rng& rng);

// Stable name -> tensor registry; drives the optimizer and the checkpoint
// layout, so the order must never depend on runtime state.
std::vector<std::pair<std::string, Tensor*>> named_parameters(Model& m);
std::vector<std::pair<std::string, std::vector<double>*>> named_buffers(Model& m);

struct LevelOutput {
    Tensor scores;  // [B,K,H,W] calibrated region-text logits
    Tensor sides;   // [B,4*(bins+1),H,W] per-side distance logits
    Tensor embeds;  // [B,D,H,W] unit-norm region embeddings
    LevelGeometry geo;
};

struct ModelOutput {
    LevelOutput l8, l16;
    Tensor aux;  // [B,G,H16,W16]
    std::vector<RoutingStats> stats;
};

// texts: [K,D] frozen embedding matrix, one unit-norm row per pool entry.
ModelOutput model_forward(Model& m, const Tensor& images, const Tensor& texts, bool training,
                          std::vector<std::vector<int>>* plans = nullptr);

// Grounds one caption on one image (batch of one, gradient-free).
GroundResult ground_image(Model& m, const Tensor& image, const std::string& caption);

}  // namespace cg
