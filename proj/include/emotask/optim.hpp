#pragma once

#include <cstdint>
#include <vector>

#include "emotask/netcore.hpp"
#include "emotask/tensor.hpp"

namespace emotask {

struct ScheduleConfig {
  double lr_start = 0.001;
  double lr_min = 0.0;
  int total_epochs = 10;
};

// lr_min + 0.5*(lr_start - lr_min)*(1 + cos(pi*t/T)); t in 0..T.
double cosine_lr(int epoch, const ScheduleConfig& cfg);

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState init(const ModelParams& params);
};

// Bias-corrected Adam update from the model's gradient slots; gradients are
// zeroed afterward and the model version is bumped.
void adam_step(ModelParams& params, AdamState& state, double lr);

}  // namespace emotask
