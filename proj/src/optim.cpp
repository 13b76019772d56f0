#include "emotask/optim.hpp"

#include <cmath>
#include <string>

namespace emotask {

double cosine_lr(int epoch, const ScheduleConfig& cfg) {
  if (cfg.total_epochs < 1) throw ConfigError("schedule total_epochs must be >= 1");
  if (cfg.lr_start < cfg.lr_min || cfg.lr_min < 0.0)
    throw ConfigError("schedule requires lr_start >= lr_min >= 0");
  if (epoch < 0 || epoch > cfg.total_epochs)
    throw ConfigError("schedule epoch " + std::to_string(epoch) + " outside 0.." +
                      std::to_string(cfg.total_epochs));
  if (epoch == 0) return cfg.lr_start;
  if (epoch == cfg.total_epochs) return cfg.lr_min;
  double phase = 3.14159265358979323846 * static_cast<double>(epoch) /
                 static_cast<double>(cfg.total_epochs);
  return cfg.lr_min + 0.5 * (cfg.lr_start - cfg.lr_min) * (1.0 + std::cos(phase));
}

AdamState AdamState::init(const ModelParams& params) {
  AdamState s;
  s.m.reserve(params.params.size());
  s.v.reserve(params.params.size());
  for (const auto& p : params.params) {
    s.m.push_back(Tensor::zeros(p.value.shape));
    s.v.push_back(Tensor::zeros(p.value.shape));
  }
  return s;
}

void adam_step(ModelParams& params, AdamState& state, double lr) {
  if (state.m.size() != params.params.size() || state.v.size() != params.params.size())
    throw ContractError("Adam state does not match model parameter count");
  for (std::size_t t = 0; t < params.params.size(); ++t)
    if (!state.m[t].same_shape(params.params[t].value) ||
        !state.v[t].same_shape(params.params[t].value))
      throw ContractError("Adam state shape mismatch for " + params.params[t].name);

  state.step_count += 1;
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));

  for (std::size_t t = 0; t < params.params.size(); ++t) {
    ParamTensor& p = params.params[t];
    // A tensor with an all-zero gradient received no signal this step; leave
    // its parameters and moments untouched so heads without labels stay
    // bit-identical even when earlier phases primed their momentum.
    bool any = false;
    for (double g : p.grad.data)
      if (g != 0.0) {
        any = true;
        break;
      }
    if (!any) continue;
    double* m = state.m[t].data.data();
    double* v = state.v[t].data.data();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      double g = p.grad.data[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      double m_hat = m[i] / bc1;
      double v_hat = v[i] / bc2;
      p.value.data[i] -= lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
      p.grad.data[i] = 0.0;
    }
  }
  params.version += 1;
}

}  // namespace emotask
