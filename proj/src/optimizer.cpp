#include "kmine/optimizer.hpp"

#include <cmath>

#include "kmine/errors.hpp"

namespace kmine::harness {

AdamW::AdamW(std::vector<ad::Parameter*> params, OptimConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  if (cfg_.max_steps < 0) throw ConfigError("max_steps must be non-negative");
  slots_.reserve(params_.size());
  for (const ad::Parameter* p : params_) {
    Slot s;
    s.m = Mat::Zero(p->value.rows(), p->value.cols());
    s.v = Mat::Zero(p->value.rows(), p->value.cols());
    slots_.push_back(std::move(s));
  }
}

double AdamW::lr_at(ad::Group group, long long step) const {
  const double lr0 = group == ad::Group::pretrained ? cfg_.lr_pretrained : cfg_.lr_raw;
  if (cfg_.max_steps == 0) return 0.0;
  const double frac = 1.0 - static_cast<double>(step) / static_cast<double>(cfg_.max_steps);
  return lr0 * (frac < 0.0 ? 0.0 : frac);
}

void AdamW::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ad::Parameter& p = *params_[i];
    if (p.grad_is_zero()) continue;
    Slot& s = slots_[i];
    const double lr = lr_at(p.group, t_);
    ++s.t;
    s.m = cfg_.beta1 * s.m + (1.0 - cfg_.beta1) * p.grad;
    s.v.array() = cfg_.beta2 * s.v.array() + (1.0 - cfg_.beta2) * p.grad.array().square();
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s.t));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s.t));
    Mat mhat = s.m / bc1;
    Mat vhat = s.v / bc2;
    p.value.array() -=
        lr * (mhat.array() / (vhat.array().sqrt() + cfg_.eps) + cfg_.weight_decay * p.value.array());
  }
  ++t_;
}

}  // namespace kmine::harness
