#include "cg/fusion.hpp"

#include <cmath>

namespace cg {

FusionParams make_fusion_params(int channels, int text_dim, const FusionConfig& cfg, Rng& rng) {
    CG_CHECK(cfg.heads >= 1 && cfg.embed % cfg.heads == 0, "heads must divide the fusion width");
    CG_CHECK(cfg.groups >= 1 && channels % cfg.groups == 0,
             "shuffle groups must divide the channels");
    FusionParams p;
    p.phi_w = Tensor::normal({cfg.embed, channels, 1, 1}, rng, std::sqrt(2.0 / channels));
    p.phi_w.set_requires_grad(true);
    p.phi_b = Tensor::zeros({cfg.embed});
    p.phi_b.set_requires_grad(true);
    p.psi_w = Tensor::normal({cfg.embed, text_dim}, rng, std::sqrt(2.0 / text_dim));
    p.psi_w.set_requires_grad(true);
    p.psi_b = Tensor::zeros({cfg.embed});
    p.psi_b.set_requires_grad(true);
    p.log_tau = Tensor::full({1}, std::log(0.1));
    p.log_tau.set_requires_grad(true);
    p.head_bias = Tensor::zeros({cfg.heads});
    p.head_bias.set_requires_grad(true);
    p.log_scale = Tensor::zeros({1});
    p.log_scale.set_requires_grad(true);
    p.alpha_gate = Tensor::full({1}, 1.0);
    p.alpha_gate.set_requires_grad(true);
    p.beta_gate = Tensor::full({1}, 0.5);
    p.beta_gate.set_requires_grad(true);
    return p;
}

std::vector<int> shuffle_permutation(int channels, int groups) {
    CG_CHECK(groups >= 1 && channels % groups == 0, "shuffle groups must divide the channels");
    int per = channels / groups;
    std::vector<int> perm(channels);
    for (int i = 0; i < channels; ++i) perm[i] = (i % groups) * per + i / groups;
    return perm;
}

std::vector<int> inverse_permutation(const std::vector<int>& perm) {
    std::vector<int> inv(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = (int)i;
    return inv;
}

Tensor channel_shuffle(const Tensor& x, int groups) {
    return permute_channels(x, shuffle_permutation(x.dim(1), groups));
}

Tensor similarity_map(const Tensor& v, const Tensor& texts, const FusionConfig& cfg,
                      const FusionParams& p) {
    CG_CHECK(texts.ndim() == 2 && texts.dim(0) >= 1, "similarity needs at least one text");
    Tensor phi = conv2d(channel_shuffle(v, cfg.groups), p.phi_w, p.phi_b, 1, 0);
    Tensor psi = add_row_vector(matmul(texts, transpose2d(p.psi_w)), p.psi_b);
    return text_similarity_max(phi, psi, cfg.heads);
}

Tensor calibrate(const Tensor& a, const FusionParams& p) {
    Tensor scaled = mul_scalar_t(a, exp_t(neg(p.log_tau)));
    return mul_scalar_t(sigmoid(add_head_bias(scaled, p.head_bias)), exp_t(p.log_scale));
}

Tensor dual_gate_fuse(const Tensor& v, const Tensor& a_sig, const FusionParams& p) {
    Tensor bracket = mul_scalar_t(add_const(a_sig, -1.0), p.alpha_gate);
    return add(v, mul_scalar_t(mul_head_gate(v, bracket), p.beta_gate));
}

FusedLevel fuse_level(const Tensor& v, const Tensor& texts, const FusionConfig& cfg,
                      const FusionParams& p) {
    FusedLevel out;
    out.sim = similarity_map(v, texts, cfg, p);
    out.calibrated = calibrate(out.sim, p);
    out.fused = dual_gate_fuse(v, out.calibrated, p);
    return out;
}

}  // namespace cg
