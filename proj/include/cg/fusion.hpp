#pragma once

#include <vector>

#include "cg/rng.hpp"
#include "cg/tensor.hpp"

namespace cg {

// Text-guided dual-gate feature fusion with a channel shuffle up front.

struct FusionConfig {
    int heads = 4;
    int embed = 32;  // joint similarity width; heads must divide it
    int groups = 4;  // channel shuffle group count
};

struct FusionParams {
    Tensor phi_w, phi_b;  // visual projection, 1x1 conv C -> embed
    Tensor psi_w, psi_b;  // text projection, D -> embed
    Tensor log_tau;       // temperature, exp-reparameterized
    Tensor head_bias;     // per-head calibration bias
    Tensor log_scale;     // output scale, exp-reparameterized
    Tensor alpha_gate;    // attention gate factor
    Tensor beta_gate;     // feature gate factor
};
FusionParams make_fusion_params(int channels, int text_dim, const FusionConfig& cfg, Rng& rng);

// Transpose-of-groups channel permutation; perm[i] names the source channel.
std::vector<int> shuffle_permutation(int channels, int groups);
std::vector<int> inverse_permutation(const std::vector<int>& perm);
Tensor channel_shuffle(const Tensor& x, int groups);

// A[b,m,h,w] = max over pool texts of the per-head projected dot product.
// texts: [N,D] frozen embedding matrix.
Tensor similarity_map(const Tensor& v, const Tensor& texts, const FusionConfig& cfg,
                      const FusionParams& p);

// sigmoid(A/tau + head bias) * scale
Tensor calibrate(const Tensor& a, const FusionParams& p);

// V + beta * V (x) [alpha * (A_sig - 1)], head gates broadcast over their
// contiguous channel slice.
Tensor dual_gate_fuse(const Tensor& v, const Tensor& a_sig, const FusionParams& p);

struct FusedLevel {
    Tensor fused;
    Tensor sim;
    Tensor calibrated;
};
FusedLevel fuse_level(const Tensor& v, const Tensor& texts, const FusionConfig& cfg,
                      const FusionParams& p);

}  // namespace cg
