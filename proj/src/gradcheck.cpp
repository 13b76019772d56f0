#include "emotask/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "emotask/rng.hpp"

namespace emotask {

namespace {

double scalar_loss(const ModelParams& model, const Tensor& batch,
                   const std::vector<int>& expr_targets, const Tensor& au_targets,
                   GradCheckLoss kind, const FocalConfig& focal) {
  ForwardResult fr = forward(model, batch);
  switch (kind) {
    case GradCheckLoss::Focal:
      return focal_loss(fr.expr_logits, expr_targets, focal).loss;
    case GradCheckLoss::Bce:
      return bce_loss(fr.au_logits, au_targets).loss;
    case GradCheckLoss::Combined:
      return combined_loss(focal_loss(fr.expr_logits, expr_targets, focal).loss,
                           bce_loss(fr.au_logits, au_targets).loss);
  }
  return 0.0;
}

// Smallest |pre-activation| feeding any ReLU. Central differences are only
// trustworthy when no unit sits within the probe step of its kink.
double relu_margin(const ModelParams& model, const Tensor& batch) {
  ForwardResult fr = forward(model, batch);
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t li = 0; li < model.config.trunk.size(); ++li)
    if (model.config.trunk[li].kind == LayerKind::Relu)
      for (double v : fr.cache.trunk_inputs[li].data)
        margin = std::min(margin, std::abs(v));
  for (double v : fr.cache.feature_pre.data) margin = std::min(margin, std::abs(v));
  return margin;
}

}  // namespace

GradCheckResult gradcheck_model(ModelParams model, GradCheckLoss loss_kind,
                                const FocalConfig& focal, std::uint64_t seed,
                                double step, double tolerance,
                                bool corrupt_one_gradient) {
  Rng rng(mix_seed(seed, 0xf1d));
  std::size_t n = 3;
  std::vector<std::size_t> shape{n};
  shape.insert(shape.end(), model.config.input_shape.begin(), model.config.input_shape.end());
  Tensor batch = Tensor::zeros(shape);
  for (int attempt = 0; attempt < 64; ++attempt) {
    for (double& v : batch.data) v = rng.uniform(-1.0, 1.0);
    if (relu_margin(model, batch) > 100.0 * step) break;
  }

  std::vector<int> expr_targets(n);
  for (auto& t : expr_targets) t = static_cast<int>(rng.uniform_index(kNumExprClasses));
  Tensor au_targets = Tensor::zeros({n, kNumActionUnits});
  for (double& v : au_targets.data) v = rng.bernoulli(0.5) ? 1.0 : 0.0;

  // analytic gradients
  model.zero_grads();
  {
    ForwardResult fr = forward(model, batch);
    Tensor expr_grads, au_grads;
    bool use_expr = loss_kind != GradCheckLoss::Bce;
    bool use_au = loss_kind != GradCheckLoss::Focal;
    if (use_expr) expr_grads = focal_loss(fr.expr_logits, expr_targets, focal).logit_grads;
    if (use_au) au_grads = bce_loss(fr.au_logits, au_targets).logit_grads;
    backward(model, fr.cache, use_expr ? &expr_grads : nullptr,
             use_au ? &au_grads : nullptr);
  }
  if (corrupt_one_gradient && !model.params.empty())
    model.params[0].grad.data[0] += 0.5;

  GradCheckResult r;
  r.max_rel_error = 0.0;
  for (auto& p : model.params) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      double orig = p.value.data[i];
      p.value.data[i] = orig + step;
      double lp = scalar_loss(model, batch, expr_targets, au_targets, loss_kind, focal);
      p.value.data[i] = orig - step;
      double lm = scalar_loss(model, batch, expr_targets, au_targets, loss_kind, focal);
      p.value.data[i] = orig;
      double fd = (lp - lm) / (2.0 * step);
      double an = p.grad.data[i];
      // The 1e-4 floor keeps central-difference roundoff (~1e-10 absolute on
      // an O(1) loss) from registering as relative error when both values
      // are near zero.
      double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-4});
      r.max_rel_error = std::max(r.max_rel_error, rel);
      ++r.params_checked;
    }
  }
  r.pass = r.max_rel_error < tolerance;
  return r;
}

std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed, double step,
                                                 double tolerance,
                                                 bool corrupt_one_gradient) {
  struct Case {
    std::string name;
    ModelConfig config;
    GradCheckLoss loss;
    double gamma;
  };
  ModelConfig mlp = mlp_config({3, 8, 8}, /*hidden=*/4, /*feature_dim=*/8);
  ModelConfig cnn = smallcnn_config(/*image_size=*/9, /*c1=*/2, /*c2=*/3, /*hidden=*/6,
                                    /*feature_dim=*/8);
  std::vector<Case> cases = {
      {"mlp/focal_g0", mlp, GradCheckLoss::Focal, 0.0},
      {"mlp/focal_g2", mlp, GradCheckLoss::Focal, 2.0},
      {"mlp/bce", mlp, GradCheckLoss::Bce, 0.0},
      {"mlp/combined_g2", mlp, GradCheckLoss::Combined, 2.0},
      {"smallcnn/focal_g0", cnn, GradCheckLoss::Focal, 0.0},
      {"smallcnn/focal_g2", cnn, GradCheckLoss::Focal, 2.0},
      {"smallcnn/bce", cnn, GradCheckLoss::Bce, 0.0},
      {"smallcnn/combined_g2", cnn, GradCheckLoss::Combined, 2.0},
  };

  std::vector<GradCheckResult> results;
  for (std::size_t ci = 0; ci < cases.size(); ++ci) {
    const Case& c = cases[ci];
    ModelParams model = build_model(c.config, mix_seed(seed, ci), 1.7320508075688772);
    FocalConfig focal;
    focal.gamma = c.gamma;
    GradCheckResult r = gradcheck_model(std::move(model), c.loss, focal,
                                        mix_seed(seed, 0xabc + ci), step, tolerance,
                                        corrupt_one_gradient);
    r.component = c.name;
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace emotask
