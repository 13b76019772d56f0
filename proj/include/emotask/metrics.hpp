#pragma once

#include <array>
#include <string>
#include <vector>

#include "emotask/netcore.hpp"
#include "emotask/tensor.hpp"

namespace emotask {

struct ExprMetrics {
  double f1 = 0.0;   // macro over the 7 classes
  double acc = 0.0;
  std::array<double, 7> per_class_f1{};
  std::array<std::array<long, 7>, 7> confusion{};  // [truth][pred]
};

struct AuMetrics {
  double f1 = 0.0;   // mean over the 12 AUs
  double acc = 0.0;  // cellwise over 12n cells
  std::array<double, 12> per_au_f1{};
};

// Challenge blends: 0.67*F1 + 0.33*Acc (expression), 0.5*F1 + 0.5*Acc (AU).
struct BlendedScores {
  double expr_score = 0.0;
  double au_score = 0.0;
};

struct MetricsReport {
  bool has_expr = false;
  bool has_au = false;
  ExprMetrics expr;
  AuMetrics au;
  double expr_score = 0.0;
  double au_score = 0.0;
};

ExprMetrics expr_metrics(const std::vector<int>& preds, const std::vector<int>& truth);

// probs binarized at threshold with ties going positive.
AuMetrics au_metrics(const Tensor& probs, const Tensor& truth, double threshold = 0.5);

BlendedScores blended_scores(double expr_f1, double expr_acc, double au_f1, double au_acc);

struct PredictionSet {
  std::vector<int> expr_pred;  // argmax, lowest index wins ties
  Tensor au_probs;             // [n,12]
};

PredictionSet predict(const ModelParams& model, const Tensor& batch);

std::string report_to_json(const MetricsReport& report);
std::string report_to_table(const MetricsReport& report, const std::string& method_name);

}  // namespace emotask
