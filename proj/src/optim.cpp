#include "cg/optim.hpp"

#include <cmath>

namespace cg {

void adamw_step(std::span<double> param, std::span<const double> grad, std::span<double> m,
                std::span<double> v, int64_t t, const AdamWConfig& cfg) {
    CG_CHECK(param.size() == grad.size() && param.size() == m.size() && param.size() == v.size(),
             "adamw_step: buffer sizes differ");
    CG_CHECK(t >= 1, "adamw_step: step index starts at 1");
    double bc1 = 1.0 - std::pow(cfg.beta1, (double)t);
    double bc2 = 1.0 - std::pow(cfg.beta2, (double)t);
    for (size_t i = 0; i < param.size(); ++i) {
        double g = grad[i];
        if (!std::isfinite(g)) throw NumericalError("adamw_step: non-finite gradient");
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        double mhat = m[i] / bc1;
        double vhat = v[i] / bc2;
        // decay is decoupled from the adaptive step
        param[i] -= cfg.lr * cfg.weight_decay * param[i];
        param[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

void AdamW::add_param(Tensor p) {
    CG_CHECK(p.defined() && p.requires_grad(), "AdamW: parameter must require gradients");
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
    params_.push_back(std::move(p));
}

void AdamW::set_step_count(int64_t t) {
    CG_CHECK(t >= 0, "AdamW: negative step count");
    t_ = t;
}

void AdamW::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

void AdamW::step() {
    ++t_;
    for (size_t i = 0; i < params_.size(); ++i)
        adamw_step(params_[i].data_mut(), params_[i].grad(), m_[i], v_[i], t_, cfg_);
}

CosineSchedule::CosineSchedule(double init_lr, double final_lr, int64_t total_steps)
    : init_(init_lr), final_(final_lr), total_(total_steps) {
    CG_CHECK(total_steps >= 1, "CosineSchedule: need at least one step");
    CG_CHECK(init_lr > 0 && final_lr >= 0 && final_lr <= init_lr,
             "CosineSchedule: rates must satisfy 0 <= final <= init");
}

double CosineSchedule::lr_at(int64_t step) const {
    CG_CHECK(step >= 0 && step <= total_, "CosineSchedule: step outside [0, total]");
    double frac = (double)step / (double)total_;
    return final_ + (init_ - final_) * 0.5 * (1.0 + std::cos(M_PI * frac));
}

}  // namespace cg
