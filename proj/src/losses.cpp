#include "emotask/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "emotask/netcore.hpp"

namespace emotask {

namespace {
double clamp_prob(double p) {
  return std::min(std::max(p, kProbClamp), 1.0 - kProbClamp);
}
}  // namespace

LossResult focal_loss(const Tensor& expr_logits, const std::vector<int>& targets,
                      const FocalConfig& cfg) {
  if (expr_logits.shape.size() != 2 || expr_logits.shape[1] != kNumExprClasses)
    throw DimensionError("focal_loss expects [n,7] logits, got " + shape_str(expr_logits.shape));
  std::size_t n = expr_logits.shape[0];
  if (n == 0 || targets.size() != n)
    throw ContractError("focal_loss: targets length must equal batch size");
  if (cfg.gamma < 0.0) throw ConfigError("focal gamma must be nonnegative");
  for (std::size_t i = 0; i < n; ++i)
    if (targets[i] < 0 || targets[i] >= static_cast<int>(kNumExprClasses))
      throw DataError("expression label out of range 0..6 at record " + std::to_string(i) +
                      ": " + std::to_string(targets[i]));

  Tensor probs = softmax(expr_logits);
  LossResult r;
  r.logit_grads = Tensor::zeros(expr_logits.shape);
  double inv_n = 1.0 / static_cast<double>(n);

  for (std::size_t i = 0; i < n; ++i) {
    std::size_t t = static_cast<std::size_t>(targets[i]);
    double a = cfg.alpha[t];
    double u = probs.at2(i, t);
    double uc = clamp_prob(u);
    double one_minus = 1.0 - uc;
    double log_u = std::log(uc);
    double focal_w = std::pow(one_minus, cfg.gamma);
    r.loss += -a * focal_w * log_u * inv_n;

    // dL/dp_t for the per-sample focal term
    double dl_du = -a * focal_w / uc;
    if (cfg.gamma > 0.0)
      dl_du += a * cfg.gamma * std::pow(one_minus, cfg.gamma - 1.0) * log_u;

    // chain through the softmax jacobian
    for (std::size_t j = 0; j < kNumExprClasses; ++j) {
      double pj = probs.at2(i, j);
      double dpt_dzj = u * ((j == t ? 1.0 : 0.0) - pj);
      r.logit_grads.at2(i, j) = dl_du * dpt_dzj * inv_n;
    }
  }
  return r;
}

LossResult bce_loss(const Tensor& au_logits, const Tensor& targets) {
  if (au_logits.shape.size() != 2 || au_logits.shape[1] != kNumActionUnits)
    throw DimensionError("bce_loss expects [n,12] logits, got " + shape_str(au_logits.shape));
  if (targets.shape != au_logits.shape)
    throw ContractError("bce_loss: target shape must match logits");
  std::size_t n = au_logits.shape[0];
  if (n == 0) throw ContractError("bce_loss: empty batch");
  for (std::size_t i = 0; i < targets.size(); ++i)
    if (targets.data[i] != 0.0 && targets.data[i] != 1.0)
      throw DataError("AU label must be 0 or 1 at cell " + std::to_string(i));

  Tensor probs = sigmoid(au_logits);
  LossResult r;
  r.logit_grads = Tensor::zeros(au_logits.shape);
  double scale = 1.0 / static_cast<double>(kNumActionUnits * n);

  for (std::size_t i = 0; i < probs.size(); ++i) {
    double p = probs.data[i];
    double pc = clamp_prob(p);
    double y = targets.data[i];
    r.loss += -(y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc)) * scale;
    r.logit_grads.data[i] = (p - y) * scale;
  }
  return r;
}

double combined_loss(double expr_part, double au_part) {
  if (!std::isfinite(expr_part) || !std::isfinite(au_part) || expr_part < 0.0 || au_part < 0.0)
    throw ContractError("combined_loss parts must be finite and nonnegative");
  return expr_part + au_part;
}

}  // namespace emotask
