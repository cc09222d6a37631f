#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cg/tensor.hpp"

namespace cg {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

// One decoupled-decay Adam update. `t` is the 1-based step index; m and v are
// the first/second moment buffers for this parameter.
void adamw_step(std::span<double> param, std::span<const double> grad, std::span<double> m,
                std::span<double> v, int64_t t, const AdamWConfig& cfg);

class AdamW {
public:
    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

    void add_param(Tensor p);
    void set_lr(double lr) { cfg_.lr = lr; }
    double lr() const { return cfg_.lr; }
    int64_t step_count() const { return t_; }
    void set_step_count(int64_t t);
    size_t num_params() const { return params_.size(); }

    void zero_grad();
    void step();  // applies grads accumulated on the registered tensors

    // moment buffers, exposed for checkpointing
    std::vector<double>& moment1(size_t i) { return m_[i]; }
    std::vector<double>& moment2(size_t i) { return v_[i]; }

private:
    AdamWConfig cfg_;
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    int64_t t_ = 0;
};

// Half-cosine decay from init_lr to final_lr over total_steps.
class CosineSchedule {
public:
    CosineSchedule(double init_lr, double final_lr, int64_t total_steps);
    double lr_at(int64_t step) const;  // step in [0, total_steps]

private:
    double init_, final_;
    int64_t total_;
};

}  // namespace cg
