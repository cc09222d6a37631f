#include <doctest.h>

#include <cmath>
#include <vector>

#include "cg/backbone.hpp"

using namespace cg;

namespace {

constexpr double kFdEps = 1e-5;
constexpr double kFdTol = 1e-4;

Tensor rand_pt(Shape s, uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng r(seed);
    return Tensor::uniform(std::move(s), r, lo, hi);
}

void force_open_gates(DaaParams& d) {
    for (auto* t : {&d.cw2, &d.sw}) {
        auto v = t->data_mut();
        std::fill(v.begin(), v.end(), 0.0);
    }
    for (auto* t : {&d.cb2, &d.sb}) {
        auto v = t->data_mut();
        std::fill(v.begin(), v.end(), 50.0);
    }
}

Tensor identity_prototypes(int n, int c) {
    Tensor p = Tensor::zeros({n, c});
    auto v = p.data_mut();
    for (int i = 0; i < n; ++i) v[i * c + i % c] = 1.0;
    return p;
}

}  // namespace

TEST_CASE("a summary aligned with one prototype routes there with weight one") {
    Tensor protos = identity_prototypes(4, 4);
    Tensor pbar = Tensor::from({1, 4}, {0.0, 0.0, 0.0, 2.5});
    GateSet g = cosine_topk_gate(pbar, protos, 1, 0.1);
    CHECK(g.indices == std::vector<int>{3});
    CHECK(g.weights.at({0, 0}) == 1.0);
}

TEST_CASE("selected gate weights always sum to one") {
    Tensor protos = l2_normalize_rows(rand_pt({6, 5}, 11));
    Tensor pbar = rand_pt({7, 5}, 12);
    for (int k : {1, 2, 3, 6}) {
        GateSet g = cosine_topk_gate(pbar, protos, k, 0.1);
        for (int i = 0; i < 7; ++i) {
            double s = 0.0;
            for (int j = 0; j < k; ++j) s += g.weights.at({i, j});
            CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
        }
    }
    CHECK_THROWS_AS(cosine_topk_gate(pbar, protos, 7, 0.1), ContractViolation);
}

TEST_CASE("selecting every expert reproduces the dense softmax") {
    Tensor protos = l2_normalize_rows(rand_pt({5, 4}, 21));
    Tensor pbar = rand_pt({3, 4}, 22);
    GateSet g = cosine_topk_gate(pbar, protos, 5, 0.1);
    Tensor dense = scatter_per_row(g.weights, g.indices, 5);
    for (int i = 0; i < 3; ++i)
        for (int e = 0; e < 5; ++e)
            CHECK(dense.at({i, e}) == doctest::Approx(g.full_probs.at({i, e})).epsilon(1e-12));
}

TEST_CASE("a zero summary routes to the lowest-index experts uniformly") {
    Tensor protos = l2_normalize_rows(rand_pt({6, 4}, 31));
    Tensor pbar = Tensor::zeros({1, 4});
    GateSet g = cosine_topk_gate(pbar, protos, 3, 0.1);
    CHECK(g.indices == std::vector<int>{0, 1, 2});
    for (int j = 0; j < 3; ++j) CHECK(g.weights.at({0, j}) == doctest::Approx(1.0 / 3));
}

TEST_CASE("gate selection ignores positive rescaling of the summary") {
    Tensor protos = l2_normalize_rows(rand_pt({8, 6}, 41));
    Tensor pbar = rand_pt({5, 6}, 42);
    GateSet a = cosine_topk_gate(pbar, protos, 2, 0.1);
    GateSet b = cosine_topk_gate(scale(pbar, 37.5), protos, 2, 0.1);
    CHECK(a.indices == b.indices);
}

TEST_CASE("equal gate scores break toward the lower expert index") {
    Tensor protos = identity_prototypes(3, 3);
    Tensor pbar = Tensor::from({1, 3}, {1.0, 1.0, 0.0});
    GateSet g = cosine_topk_gate(pbar, protos, 1, 0.1);
    CHECK(g.indices == std::vector<int>{0});
    GateSet g2 = cosine_topk_gate(pbar, protos, 2, 0.1);
    CHECK(g2.indices == std::vector<int>{0, 1});
    CHECK(g2.weights.at({0, 0}) == doctest::Approx(0.5));
}

TEST_CASE("an expert with zero adapters is exactly the shared transform") {
    Rng rng(7);
    MoEConfig cfg;
    cfg.experts = 3;
    cfg.rank = 2;
    ExpertParams p = make_expert_params(6, cfg, rng);
    Tensor x = rand_pt({1, 6, 4, 4}, 51);
    Tensor direct = conv2d(x, p.conv_w, p.conv_b, 1, 1);
    Tensor applied = expert_apply(x, 1, p);  // up-projections start at zero
    for (int i = 0; i < x.size(); ++i) CHECK(applied.data()[i] == direct.data()[i]);
}

TEST_CASE("the low-rank delta never exceeds its rank") {
    Rng rng(8);
    MoEConfig cfg;
    cfg.experts = 2;
    cfg.rank = 1;
    ExpertParams p = make_expert_params(3, cfg, rng);
    {
        auto v = p.up[0].data_mut();
        for (size_t i = 0; i < v.size(); ++i) v[i] = 0.5 + 0.25 * i;
    }
    Tensor x = rand_pt({1, 3, 2, 2}, 52);
    Tensor delta = lora_delta(x, p.down[0], p.up[0]);
    auto b = p.up[0].data();
    // rank 1: every location's delta is collinear with the up-projection row
    for (int k = 0; k < 4; ++k) {
        double ratio = delta.data()[k] / b[0];
        for (int c = 1; c < 3; ++c)
            CHECK(delta.data()[c * 4 + k] == doctest::Approx(ratio * b[c]).epsilon(1e-9));
    }
}

TEST_CASE("a hand-sized adapter produces the worked-out delta") {
    MoEConfig cfg;
    cfg.experts = 1;
    cfg.top_k = 1;
    cfg.rank = 1;
    Rng rng(9);
    ExpertParams p = make_expert_params(2, cfg, rng);
    {
        auto w = p.conv_w.data_mut();
        std::fill(w.begin(), w.end(), 0.0);
        auto a = p.down[0].data_mut();
        a[0] = 1.0;
        a[1] = 0.0;
        auto b = p.up[0].data_mut();
        b[0] = 0.0;
        b[1] = 1.0;
    }
    Tensor x = Tensor::from({1, 2, 1, 1}, {3.0, 5.0});
    Tensor y = expert_apply(x, 0, p);
    CHECK(y.at({0, 0, 0, 0}) == doctest::Approx(0.0));
    CHECK(y.at({0, 1, 0, 0}) == doctest::Approx(3.0));
}

TEST_CASE("with zero adapters and open gates the block is input plus shared conv") {
    Rng rng(10);
    MoEConfig cfg;
    cfg.experts = 4;
    cfg.top_k = 2;
    cfg.patch = 2;
    cfg.rank = 2;
    PlmoeBlockParams p = make_plmoe_block_params(8, cfg, rng);
    force_open_gates(p.daa);
    Tensor x = rand_pt({1, 8, 4, 4}, 53);
    Tensor y = plmoe_block(x, cfg, p);
    Tensor ref = add(x, conv2d(x, p.experts.conv_w, p.experts.conv_b, 1, 1));
    for (int i = 0; i < x.size(); ++i)
        CHECK(y.data()[i] == doctest::Approx(ref.data()[i]).epsilon(1e-12));
}

TEST_CASE("the block matches a dense mixture reference for every routing shape") {
    for (int n_e : {2, 4, 8})
        for (int k : {1, 2, 3})
            for (int patch : {1, 2, 4, 0}) {
                MoEConfig cfg;
                cfg.experts = n_e;
                cfg.top_k = k;
                cfg.patch = patch;
                cfg.rank = 2;
                Rng rng(100 + n_e * 10 + k + patch);
                if (k > n_e) {
                    CHECK_THROWS_AS(make_expert_params(4, cfg, rng), ContractViolation);
                    continue;
                }
                CAPTURE(n_e);
                CAPTURE(k);
                CAPTURE(patch);
                PlmoeBlockParams p = make_plmoe_block_params(4, cfg, rng);
                for (auto& up : p.experts.up) {
                    Rng r2(rng.next_u64());
                    auto v = up.data_mut();
                    for (auto& e : v) e = r2.uniform(-0.5, 0.5);
                }
                Tensor x = rand_pt({1, 4, 4, 4}, 500 + n_e + k + patch);

                RoutingStats stats;
                Tensor y = plmoe_block(x, cfg, p, &stats);

                // reference: every expert materialized densely, mixed by the gates
                Tensor inner = daa_lite(x, p.daa);
                int ph = patch == 0 ? 4 : patch, pw = ph;
                GateSet gate = cosine_topk_gate(patch_mean(inner, ph, pw), p.experts.prototypes,
                                                k, cfg.temperature);
                Tensor shared = conv2d(inner, p.experts.conv_w, p.experts.conv_b, 1, 1);
                std::vector<double> ref(x.size());
                for (int i = 0; i < x.size(); ++i) ref[i] = x.data()[i] + shared.data()[i];
                double alpha = p.experts.lora_scale.item();
                int nw = 4 / pw;
                for (int e = 0; e < n_e; ++e) {
                    Tensor delta = lora_delta(inner, p.experts.down[e], p.experts.up[e]);
                    for (int c = 0; c < 4; ++c)
                        for (int yy = 0; yy < 4; ++yy)
                            for (int xx = 0; xx < 4; ++xx) {
                                int row = (yy / ph) * nw + xx / pw;
                                double g = 0.0;
                                for (int j = 0; j < k; ++j)
                                    if (gate.indices[row * k + j] == e)
                                        g = gate.weights.at({row, j});
                                ref[(c * 4 + yy) * 4 + xx] +=
                                    alpha * g * delta.at({0, c, yy, xx});
                            }
                }
                for (int i = 0; i < x.size(); ++i)
                    CHECK(std::abs(y.data()[i] - ref[i]) < 1e-9);

                double fsum = 0.0, psum = 0.0;
                for (int e = 0; e < n_e; ++e) {
                    fsum += stats.fraction[e];
                    psum += stats.mean_prob.at({e});
                }
                CHECK(fsum == doctest::Approx(1.0).epsilon(1e-9));
                CHECK(psum == doctest::Approx(1.0).epsilon(1e-9));
            }
}

TEST_CASE("load balance hits its closed forms at uniform routing and collapse") {
    for (int n_e : {2, 4, 8}) {
        RoutingStats uniform;
        uniform.fraction.assign(n_e, 1.0 / n_e);
        uniform.mean_prob = Tensor::full({n_e}, 1.0 / n_e);
        CHECK(load_balance_loss(uniform, n_e).item() == doctest::Approx(1.0).epsilon(1e-12));

        RoutingStats collapse;
        collapse.fraction.assign(n_e, 0.0);
        collapse.fraction[0] = 1.0;
        Tensor mp = Tensor::zeros({n_e});
        mp.data_mut()[0] = 1.0;
        collapse.mean_prob = mp;
        CHECK(load_balance_loss(collapse, n_e).item() ==
              doctest::Approx((double)n_e).epsilon(1e-12));
    }
}

TEST_CASE("load balance stays at or above one when counts track probabilities") {
    Rng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        int n_e = 2 + (int)rng.uniform_u64(7);
        std::vector<double> p(n_e);
        double z = 0.0;
        for (auto& v : p) z += v = rng.uniform(0.01, 1.0);
        for (auto& v : p) v /= z;
        RoutingStats s;
        s.fraction = p;
        s.mean_prob = Tensor::from({n_e}, std::vector<double>(p));
        CHECK(load_balance_loss(s, n_e).item() >= 1.0 - 1e-12);
    }
}

TEST_CASE("routing entropy is permutation-free and order-free in the loss") {
    RoutingStats s;
    s.fraction = {0.5, 0.25, 0.25};
    s.mean_prob = Tensor::from({3}, {0.2, 0.3, 0.5});
    double l1 = load_balance_loss(s, 3).item();
    RoutingStats s2;
    s2.fraction = {0.25, 0.5, 0.25};
    s2.mean_prob = Tensor::from({3}, {0.3, 0.2, 0.5});
    CHECK(load_balance_loss(s2, 3).item() == doctest::Approx(l1).epsilon(1e-12));
    CHECK(s.entropy() == doctest::Approx(s2.entropy()).epsilon(1e-12));
}

TEST_CASE("attention gates stay inside the open unit interval") {
    Rng rng(13);
    DaaParams d = make_daa_params(4, rng);
    Tensor x = rand_pt({2, 4, 3, 3}, 54, -2.0, 2.0);
    Tensor y = daa_lite(x, d);
    for (int i = 0; i < x.size(); ++i) {
        double ratio = x.data()[i] == 0.0 ? 0.5 : y.data()[i] / x.data()[i];
        CHECK(ratio > 0.0);
        CHECK(ratio < 1.0);
    }
}

TEST_CASE("a spatially constant input yields a spatially constant attention map") {
    Rng rng(14);
    DaaParams d = make_daa_params(3, rng);
    Tensor x = Tensor::zeros({1, 3, 4, 4});
    {
        auto v = x.data_mut();
        for (int c = 0; c < 3; ++c)
            for (int k = 0; k < 16; ++k) v[c * 16 + k] = 0.7 - 0.4 * c;
    }
    Tensor y = daa_lite(x, d);
    for (int c = 0; c < 3; ++c)
        for (int k = 1; k < 16; ++k)
            CHECK(y.data()[c * 16 + k] == doctest::Approx(y.data()[c * 16]).epsilon(1e-12));
}

TEST_CASE("gradcheck runs through attention, routing, and the mixed experts") {
    MoEConfig cfg;
    cfg.experts = 3;
    cfg.top_k = 2;
    cfg.patch = 2;
    cfg.rank = 2;
    Rng rng(15);
    PlmoeBlockParams p = make_plmoe_block_params(4, cfg, rng);
    for (auto& up : p.experts.up) {
        Rng r2(rng.next_u64());
        auto v = up.data_mut();
        for (auto& e : v) e = r2.uniform(-0.5, 0.5);
    }
    Tensor x = rand_pt({1, 4, 4, 4}, 55);
    std::vector<int> plan;
    {
        RoutingStats st;
        plmoe_block(x, cfg, p, &st, &plan);  // record the routing once
    }
    auto f = [&] {
        RoutingStats st;
        std::vector<int> frozen = plan;
        Tensor y = plmoe_block(x, cfg, p, &st, &frozen);
        return add(mean_all(mul(y, y)), load_balance_loss(st, cfg.experts));
    };
    CHECK(grad_check(f, x, kFdEps) < kFdTol);
    CHECK(grad_check(f, p.experts.down[0], kFdEps) < kFdTol);
    CHECK(grad_check(f, p.experts.up[1], kFdEps) < kFdTol);
    CHECK(grad_check(f, p.experts.prototypes, kFdEps) < kFdTol);
    CHECK(grad_check(f, p.experts.lora_scale, kFdEps) < kFdTol);
    CHECK(grad_check(f, p.experts.conv_w, kFdEps) < kFdTol);
    CHECK(grad_check(f, p.daa.cw1, kFdEps) < kFdTol);
    CHECK(grad_check(f, p.daa.sw, kFdEps) < kFdTol);
}

TEST_CASE("prototype rows return to unit norm after renormalization") {
    Rng rng(16);
    MoEConfig cfg;
    ExpertParams p = make_expert_params(8, cfg, rng);
    {
        auto v = p.prototypes.data_mut();
        for (auto& e : v) e *= 3.7;
    }
    renormalize_prototypes(p);
    for (int e = 0; e < 8; ++e) {
        double sq = 0.0;
        for (int c = 0; c < 8; ++c) sq += p.prototypes.at({e, c}) * p.prototypes.at({e, c});
        CHECK(sq == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("the pyramid lands on strides eight and sixteen") {
    Rng rng(17);
    MoEConfig cfg;
    cfg.experts = 2;
    cfg.rank = 2;
    cfg.cascades = 1;
    BackboneParams p = make_backbone_params(8, cfg, rng);
    Tensor img = rand_pt({2, 3, 64, 64}, 56, 0.0, 1.0);
    Pyramid py = build_pyramid(img, cfg, p);
    CHECK(py.f8.shape() == Shape{2, 8, 8, 8});
    CHECK(py.f16.shape() == Shape{2, 8, 4, 4});
    CHECK(py.stats.size() == 1);

    Tensor odd = rand_pt({1, 3, 24, 24}, 57);
    CHECK_THROWS_AS(build_pyramid(odd, cfg, p), ContractViolation);
}

TEST_CASE("a batch of two equals two independent single runs") {
    Rng rng(18);
    MoEConfig cfg;
    cfg.experts = 4;
    cfg.rank = 2;
    cfg.cascades = 2;
    BackboneParams p = make_backbone_params(8, cfg, rng);
    Tensor a = rand_pt({1, 3, 32, 32}, 58, 0.0, 1.0);
    Tensor b = rand_pt({1, 3, 32, 32}, 59, 0.0, 1.0);
    std::vector<double> both(a.data().begin(), a.data().end());
    both.insert(both.end(), b.data().begin(), b.data().end());
    Tensor ab = Tensor::from({2, 3, 32, 32}, std::move(both));

    Pyramid pa = build_pyramid(a, cfg, p);
    Pyramid pb = build_pyramid(b, cfg, p);
    Pyramid pab = build_pyramid(ab, cfg, p);
    int n8 = pa.f8.size(), n16 = pa.f16.size();
    for (int i = 0; i < n8; ++i) {
        CHECK(pab.f8.data()[i] == doctest::Approx(pa.f8.data()[i]).epsilon(1e-12));
        CHECK(pab.f8.data()[n8 + i] == doctest::Approx(pb.f8.data()[i]).epsilon(1e-12));
    }
    for (int i = 0; i < n16; ++i) {
        CHECK(pab.f16.data()[i] == doctest::Approx(pa.f16.data()[i]).epsilon(1e-12));
        CHECK(pab.f16.data()[n16 + i] == doctest::Approx(pb.f16.data()[i]).epsilon(1e-12));
    }
}
