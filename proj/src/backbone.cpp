#include "cg/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cg {

namespace {

Tensor conv_param(int out_c, int in_c, int k, Rng& rng) {
    double std = std::sqrt(2.0 / (in_c * k * k));
    Tensor w = Tensor::normal({out_c, in_c, k, k}, rng, std);
    w.set_requires_grad(true);
    return w;
}

Tensor bias_param(int n, double v = 0.0) {
    Tensor b = Tensor::full({n}, v);
    b.set_requires_grad(true);
    return b;
}

}  // namespace

DaaParams make_daa_params(int channels, Rng& rng) {
    int hidden = std::max(1, channels / 4);
    DaaParams p;
    p.cw1 = Tensor::normal({hidden, channels}, rng, std::sqrt(2.0 / channels));
    p.cw1.set_requires_grad(true);
    p.cb1 = bias_param(hidden);
    p.cw2 = Tensor::normal({channels, hidden}, rng, std::sqrt(2.0 / hidden));
    p.cw2.set_requires_grad(true);
    p.cb2 = bias_param(channels, 2.0);  // gates open at sigmoid(2) so signal survives init
    p.sw = conv_param(1, 2, 7, rng);
    p.sb = bias_param(1, 2.0);
    return p;
}

Tensor daa_lite(const Tensor& x, const DaaParams& p) {
    Tensor pooled = global_avg_pool(x);
    Tensor h = relu(add_row_vector(matmul(pooled, transpose2d(p.cw1)), p.cb1));
    Tensor channel_gate = sigmoid(add_row_vector(matmul(h, transpose2d(p.cw2)), p.cb2));
    Tensor xc = mul_channel_gate(x, channel_gate);
    Tensor mm = replicate_pad_hw(channel_mean_max(xc), 3);
    Tensor spatial_gate = sigmoid(conv2d(mm, p.sw, p.sb, 1, 0));
    return mul_spatial_gate(xc, spatial_gate);
}

ExpertParams make_expert_params(int channels, const MoEConfig& cfg, Rng& rng) {
    CG_CHECK(cfg.experts >= 1 && cfg.top_k >= 1 && cfg.top_k <= cfg.experts,
             "expert mixture needs 1 <= K <= N_e");
    CG_CHECK(cfg.rank >= 1 && cfg.rank < channels, "adapter rank must stay below the width");
    ExpertParams p;
    p.conv_w = conv_param(channels, channels, 3, rng);
    p.conv_b = bias_param(channels);
    for (int e = 0; e < cfg.experts; ++e) {
        Tensor a = Tensor::normal({channels, cfg.rank}, rng, 1.0 / std::sqrt(channels));
        a.set_requires_grad(true);
        p.down.push_back(a);
        Tensor b = Tensor::zeros({cfg.rank, channels});
        b.set_requires_grad(true);
        p.up.push_back(b);
    }
    p.prototypes = Tensor::normal({cfg.experts, channels}, rng, 1.0);
    p.prototypes.set_requires_grad(true);
    renormalize_prototypes(p);
    p.lora_scale = Tensor::full({1}, 1.0);
    p.lora_scale.set_requires_grad(true);
    return p;
}

void renormalize_prototypes(ExpertParams& p) {
    auto v = p.prototypes.data_mut();
    int n = p.prototypes.dim(0), c = p.prototypes.dim(1);
    for (int e = 0; e < n; ++e) {
        double sq = 0.0;
        for (int j = 0; j < c; ++j) sq += v[e * c + j] * v[e * c + j];
        CG_CHECK(sq > 0.0, "routing prototype collapsed to zero");
        double inv = 1.0 / std::sqrt(sq);
        for (int j = 0; j < c; ++j) v[e * c + j] *= inv;
    }
}

Tensor expert_apply(const Tensor& x, int e, const ExpertParams& p) {
    CG_CHECK(e >= 0 && e < (int)p.down.size(), "expert index out of range");
    Tensor shared = conv2d(x, p.conv_w, p.conv_b, 1, 1);
    return add(shared, mul_scalar_t(lora_delta(x, p.down[e], p.up[e]), p.lora_scale));
}

GateSet cosine_topk_gate(const Tensor& pbar, const Tensor& prototypes, int k, double temperature,
                         const std::vector<int>* frozen) {
    CG_CHECK(pbar.ndim() == 2 && prototypes.ndim() == 2 && pbar.dim(1) == prototypes.dim(1),
             "gate: summary and prototype widths differ");
    int rows = pbar.dim(0), n_e = prototypes.dim(0);
    CG_CHECK(k >= 1 && k <= n_e, "gate: K must lie in [1, N_e]");
    CG_CHECK(temperature > 0.0, "gate: temperature must be positive");

    Tensor scores =
        scale(matmul(l2_normalize_rows(pbar), transpose2d(prototypes)), 1.0 / temperature);
    GateSet out;
    out.full_probs = softmax_rows(scores);

    if (frozen && !frozen->empty()) {
        CG_CHECK((int)frozen->size() == rows * k, "gate: frozen plan has the wrong size");
        out.indices = *frozen;
    } else {
        out.indices.resize((size_t)rows * k);
        auto sv = scores.data();
        std::vector<int> order(n_e);
        for (int i = 0; i < rows; ++i) {
            const double* row = sv.data() + (size_t)i * n_e;
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(),
                             [row](int a, int b) { return row[a] > row[b]; });
            std::copy(order.begin(), order.begin() + k, out.indices.begin() + (size_t)i * k);
        }
    }
    out.weights = softmax_rows(take_per_row(scores, out.indices, k));
    return out;
}

double RoutingStats::entropy() const {
    auto p = mean_prob.data();
    double h = 0.0;
    for (double v : p)
        if (v > 0.0) h -= v * std::log(v);
    return h;
}

Tensor load_balance_loss(const RoutingStats& stats, int n_experts) {
    CG_CHECK((int)stats.fraction.size() == n_experts && stats.mean_prob.size() == n_experts,
             "load balance: stats size mismatch");
    return scale(dot_const(stats.mean_prob, stats.fraction), (double)n_experts);
}

PlmoeBlockParams make_plmoe_block_params(int channels, const MoEConfig& cfg, Rng& rng) {
    PlmoeBlockParams p;
    p.daa = make_daa_params(channels, rng);
    p.experts = make_expert_params(channels, cfg, rng);
    return p;
}

Tensor plmoe_block(const Tensor& x, const MoEConfig& cfg, const PlmoeBlockParams& p,
                   RoutingStats* stats, std::vector<int>* plan) {
    CG_CHECK(x.ndim() == 4, "plmoe block expects [B,C,H,W]");
    CG_CHECK(cfg.patch >= 0, "patch size must be >= 1 (0 routes the whole map)");
    int h = x.dim(2), w = x.dim(3);
    int ph = cfg.patch == 0 ? h : cfg.patch;
    int pw = cfg.patch == 0 ? w : cfg.patch;
    int hp = (h + ph - 1) / ph * ph;
    int wp = (w + pw - 1) / pw * pw;

    Tensor inner = daa_lite(x, p.daa);
    if (hp != h || wp != w) inner = zero_pad_hw(inner, hp, wp);

    Tensor pbar = patch_mean(inner, ph, pw);
    const std::vector<int>* frozen = (plan && !plan->empty()) ? plan : nullptr;
    GateSet gate =
        cosine_topk_gate(pbar, p.experts.prototypes, cfg.top_k, cfg.temperature, frozen);
    if (plan && plan->empty()) *plan = gate.indices;

    Tensor dense = scatter_per_row(gate.weights, gate.indices, cfg.experts);
    Tensor mixed;
    std::vector<char> used(cfg.experts, 0);
    for (int i : gate.indices) used[i] = 1;
    for (int e = 0; e < cfg.experts; ++e) {
        if (!used[e]) continue;
        Tensor term = mul_patch_gate(lora_delta(inner, p.experts.down[e], p.experts.up[e]), dense,
                                     e, ph, pw);
        mixed = mixed.defined() ? add(mixed, term) : term;
    }
    Tensor y = conv2d(inner, p.experts.conv_w, p.experts.conv_b, 1, 1);
    if (mixed.defined()) y = add(y, mul_scalar_t(mixed, p.experts.lora_scale));
    if (hp != h || wp != w) y = crop_hw(y, h, w);

    if (stats) {
        stats->fraction.assign(cfg.experts, 0.0);
        double share = 1.0 / ((double)gate.indices.size());
        for (int i : gate.indices) stats->fraction[i] += share;
        stats->mean_prob = mean_rows(gate.full_probs);
    }
    return add(x, y);
}

BackboneParams make_backbone_params(int channels, const MoEConfig& cfg, Rng& rng) {
    BackboneParams p;
    p.stem_w1 = conv_param(16, 3, 3, rng);
    p.stem_b1 = bias_param(16);
    p.stem_w2 = conv_param(24, 16, 3, rng);
    p.stem_b2 = bias_param(24);
    p.stem_w3 = conv_param(channels, 24, 3, rng);
    p.stem_b3 = bias_param(channels);
    for (int i = 0; i < cfg.cascades; ++i)
        p.blocks.push_back(make_plmoe_block_params(channels, cfg, rng));
    p.down_w = conv_param(channels, channels, 3, rng);
    p.down_b = bias_param(channels);
    return p;
}

Pyramid build_pyramid(const Tensor& image, const MoEConfig& cfg, const BackboneParams& p,
                      std::vector<std::vector<int>>* plans) {
    CG_CHECK(image.ndim() == 4 && image.dim(1) == 3, "backbone expects [B,3,H,W]");
    CG_CHECK(image.dim(2) % 16 == 0 && image.dim(3) % 16 == 0,
             "image sides must be divisible by 16");
    Tensor s = relu(conv2d(image, p.stem_w1, p.stem_b1, 2, 1));
    s = relu(conv2d(s, p.stem_w2, p.stem_b2, 2, 1));
    s = relu(conv2d(s, p.stem_w3, p.stem_b3, 2, 1));

    if (plans) plans->resize(p.blocks.size());
    Pyramid out;
    out.stats.resize(p.blocks.size());
    for (size_t i = 0; i < p.blocks.size(); ++i)
        s = plmoe_block(s, cfg, p.blocks[i], &out.stats[i], plans ? &(*plans)[i] : nullptr);
    out.f8 = s;
    out.f16 = relu(conv2d(s, p.down_w, p.down_b, 2, 1));
    return out;
}

}  // namespace cg
