#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "cg/optim.hpp"

using namespace cg;

TEST_CASE("first update step moves by roughly the learning rate") {
    std::vector<double> p = {1.0}, g = {0.5}, m = {0.0}, v = {0.0};
    AdamWConfig cfg;
    cfg.lr = 1e-3;
    adamw_step(p, g, m, v, 1, cfg);
    // mhat = 0.5, sqrt(vhat) = 0.5, so the step is lr * 0.5/(0.5 + eps)
    CHECK(p[0] == doctest::Approx(1.0 - 1e-3 * (0.5 / (0.5 + 1e-8))).epsilon(1e-12));
    CHECK(p[0] == doctest::Approx(0.999).epsilon(1e-9));
}

TEST_CASE("zero gradient leaves only the decoupled decay") {
    std::vector<double> p = {1.0}, g = {0.0}, m = {0.0}, v = {0.0};
    AdamWConfig cfg;
    cfg.lr = 1e-3;
    cfg.weight_decay = 0.025;
    adamw_step(p, g, m, v, 1, cfg);
    CHECK(p[0] == doctest::Approx(0.999975).epsilon(1e-12));
}

TEST_CASE("constant gradients give near-constant normalized steps") {
    std::vector<double> p = {1.0}, g = {1.0}, m = {0.0}, v = {0.0};
    AdamWConfig cfg;
    cfg.lr = 0.01;
    adamw_step(p, g, m, v, 1, cfg);
    adamw_step(p, g, m, v, 2, cfg);
    CHECK(p[0] == doctest::Approx(1.0 - 2 * 0.01).epsilon(1e-7));
}

TEST_CASE("non-finite gradients are refused") {
    std::vector<double> p = {1.0}, g = {std::numeric_limits<double>::infinity()};
    std::vector<double> m = {0.0}, v = {0.0};
    AdamWConfig cfg;
    CHECK_THROWS_AS(adamw_step(p, g, m, v, 1, cfg), NumericalError);
}

TEST_CASE("optimizer drives a quadratic to its minimum") {
    Tensor x = Tensor::scalar(-2.0);
    x.set_requires_grad(true);
    AdamWConfig cfg;
    cfg.lr = 0.05;
    AdamW opt(cfg);
    opt.add_param(x);
    for (int i = 0; i < 500; ++i) {
        opt.zero_grad();
        Tensor d = add_const(x, -3.0);
        Tensor loss = sum_all(mul(d, d));
        loss.backward();
        opt.step();
    }
    CHECK(x.item() == doctest::Approx(3.0).epsilon(1e-2));
    CHECK(opt.step_count() == 500);
}

TEST_CASE("untracked tensors cannot be registered") {
    AdamW opt(AdamWConfig{});
    Tensor x = Tensor::scalar(1.0);
    CHECK_THROWS_AS(opt.add_param(x), ContractViolation);
}

TEST_CASE("cosine schedule hits its endpoints and midpoint") {
    CosineSchedule s(2e-3, 2e-5, 100);
    CHECK(s.lr_at(0) == doctest::Approx(2e-3).epsilon(1e-12));
    CHECK(s.lr_at(100) == doctest::Approx(2e-5).epsilon(1e-12));
    CHECK(s.lr_at(50) == doctest::Approx(1.01e-3).epsilon(1e-12));
}

TEST_CASE("cosine schedule is monotone non-increasing") {
    CosineSchedule s(1e-2, 1e-4, 37);
    double prev = s.lr_at(0);
    for (int t = 1; t <= 37; ++t) {
        double cur = s.lr_at(t);
        CHECK(cur <= prev + 1e-15);
        prev = cur;
    }
}

TEST_CASE("schedule rejects out-of-range queries and bad setups") {
    CosineSchedule s(1e-3, 1e-5, 10);
    CHECK_THROWS_AS((void)s.lr_at(-1), ContractViolation);
    CHECK_THROWS_AS((void)s.lr_at(11), ContractViolation);
    CHECK_THROWS_AS(CosineSchedule(1e-3, 2e-3, 10), ContractViolation);
    CHECK_THROWS_AS(CosineSchedule(1e-3, 1e-5, 0), ContractViolation);
}
