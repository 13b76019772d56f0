#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "emotask/losses.hpp"
#include "emotask/netcore.hpp"

namespace emotask {

struct GradCheckResult {
  std::string component;
  double max_rel_error = 0.0;
  std::size_t params_checked = 0;
  bool pass = false;
};

enum class GradCheckLoss { Focal, Bce, Combined };

// Central finite-difference check of every parameter gradient of `model`
// against the analytic backward pass, on a random batch. The reference path
// uses only forward() plus the scalar loss value.
GradCheckResult gradcheck_model(ModelParams model, GradCheckLoss loss_kind,
                                const FocalConfig& focal, std::uint64_t seed,
                                double step, double tolerance,
                                bool corrupt_one_gradient = false);

// The standard suite: sub-2000-parameter instances of both trunk presets
// crossed with focal (gamma 0 and 2), BCE and the combined loss.
std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed, double step = 1e-6,
                                                 double tolerance = 1e-4,
                                                 bool corrupt_one_gradient = false);

}  // namespace emotask
