#pragma once

#include <vector>

#include "kmine/autodiff.hpp"

namespace kmine::harness {

using ad::Mat;

struct OptimConfig {
  double lr_pretrained = 2e-5;
  double lr_raw = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  int max_steps = 1;
};

// Adam with decoupled weight decay, two learning-rate groups and linear
// decay to zero. Parameters whose accumulated gradient is exactly zero are
// skipped outright (no moment update, no decay), so untouched parameters
// stay bitwise identical.
class AdamW {
 public:
  AdamW(std::vector<ad::Parameter*> params, OptimConfig cfg);

  // lr at a 0-based step index: lr0 * (1 - step / max_steps).
  double lr_at(ad::Group group, long long step) const;
  void step();
  long long steps_taken() const { return t_; }

  struct Slot {
    Mat m, v;
    long long t = 0;  // per-parameter update count (bias correction)
  };
  std::vector<Slot>& slots() { return slots_; }
  const std::vector<Slot>& slots() const { return slots_; }
  void set_steps_taken(long long t) { t_ = t; }
  const OptimConfig& config() const { return cfg_; }
  const std::vector<ad::Parameter*>& params() const { return params_; }

 private:
  std::vector<ad::Parameter*> params_;
  std::vector<Slot> slots_;
  OptimConfig cfg_;
  long long t_ = 0;
};

}  // namespace kmine::harness
