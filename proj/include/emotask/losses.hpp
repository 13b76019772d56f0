#pragma once

#include <array>
#include <vector>

#include "emotask/tensor.hpp"

namespace emotask {

// Focal loss hyperparameters. gamma = 0 with uniform alpha reduces to plain
// cross-entropy.
struct FocalConfig {
  double gamma = 2.0;
  std::array<double, 7> alpha = {1, 1, 1, 1, 1, 1, 1};
};

struct LossResult {
  double loss = 0.0;
  Tensor logit_grads;
};

constexpr double kProbClamp = 1e-12;

// Mean over samples of -alpha_t * (1 - p_t)^gamma * log(p_t), p = softmax.
// logit_grads is the analytic gradient of that mean w.r.t. the logits.
LossResult focal_loss(const Tensor& expr_logits, const std::vector<int>& targets,
                      const FocalConfig& cfg);

// Mean over all 12n cells of the binary cross-entropy with p = sigmoid.
LossResult bce_loss(const Tensor& au_logits, const Tensor& targets);

// Equal-weight sum of the two task losses.
double combined_loss(double expr_part, double au_part);

}  // namespace emotask
