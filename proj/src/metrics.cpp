#include "emotask/metrics.hpp"

#include <iomanip>
#include <sstream>

#include "json.hpp"

namespace emotask {

namespace {

double f1_from_counts(long tp, long fp, long fn) {
  long denom = 2 * tp + fp + fn;
  if (denom == 0) return 0.0;  // zero support, zero predictions
  return 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

}  // namespace

ExprMetrics expr_metrics(const std::vector<int>& preds, const std::vector<int>& truth) {
  if (preds.size() != truth.size())
    throw ContractError("expr_metrics: preds and truth lengths differ");
  if (preds.empty()) throw ContractError("expr_metrics: empty input");

  ExprMetrics m;
  long correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    int p = preds[i], t = truth[i];
    if (p < 0 || p > 6 || t < 0 || t > 6)
      throw DataError("expression value outside 0..6 at index " + std::to_string(i));
    m.confusion[t][p] += 1;
    if (p == t) ++correct;
  }
  m.acc = static_cast<double>(correct) / static_cast<double>(preds.size());

  double f1_sum = 0.0;
  for (int c = 0; c < 7; ++c) {
    long tp = m.confusion[c][c];
    long fp = 0, fn = 0;
    for (int o = 0; o < 7; ++o) {
      if (o == c) continue;
      fp += m.confusion[o][c];
      fn += m.confusion[c][o];
    }
    m.per_class_f1[c] = f1_from_counts(tp, fp, fn);
    f1_sum += m.per_class_f1[c];
  }
  m.f1 = f1_sum / 7.0;
  return m;
}

AuMetrics au_metrics(const Tensor& probs, const Tensor& truth, double threshold) {
  if (probs.shape.size() != 2 || probs.shape[1] != kNumActionUnits)
    throw ContractError("au_metrics expects [n,12] probabilities");
  if (truth.shape != probs.shape)
    throw ContractError("au_metrics: probs and truth shapes differ");
  if (threshold <= 0.0 || threshold >= 1.0)
    throw ConfigError("AU threshold must be in (0,1)");
  std::size_t n = probs.shape[0];
  if (n == 0) throw ContractError("au_metrics: empty input");

  AuMetrics m;
  long correct_cells = 0;
  double f1_sum = 0.0;
  for (std::size_t j = 0; j < kNumActionUnits; ++j) {
    long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double yv = truth.at2(i, j);
      if (yv != 0.0 && yv != 1.0)
        throw DataError("AU truth must be binary at sample " + std::to_string(i));
      int pred = probs.at2(i, j) >= threshold ? 1 : 0;
      int y = static_cast<int>(yv);
      if (pred == y) ++correct_cells;
      if (pred == 1 && y == 1) ++tp;
      if (pred == 1 && y == 0) ++fp;
      if (pred == 0 && y == 1) ++fn;
    }
    m.per_au_f1[j] = f1_from_counts(tp, fp, fn);
    f1_sum += m.per_au_f1[j];
  }
  m.f1 = f1_sum / static_cast<double>(kNumActionUnits);
  m.acc = static_cast<double>(correct_cells) / static_cast<double>(n * kNumActionUnits);
  return m;
}

BlendedScores blended_scores(double expr_f1, double expr_acc, double au_f1, double au_acc) {
  for (double v : {expr_f1, expr_acc, au_f1, au_acc})
    if (v < 0.0 || v > 1.0) throw ContractError("metric components must lie in [0,1]");
  BlendedScores s;
  s.expr_score = 0.67 * expr_f1 + 0.33 * expr_acc;
  s.au_score = 0.5 * au_f1 + 0.5 * au_acc;
  return s;
}

PredictionSet predict(const ModelParams& model, const Tensor& batch) {
  ForwardResult fr = forward(model, batch);
  PredictionSet out;
  std::size_t n = fr.expr_logits.shape[0];
  out.expr_pred.resize(n);
  Tensor probs = softmax(fr.expr_logits);
  for (std::size_t i = 0; i < n; ++i) {
    int best = 0;
    for (int j = 1; j < 7; ++j)
      if (probs.at2(i, j) > probs.at2(i, best)) best = j;
    out.expr_pred[i] = best;
  }
  out.au_probs = sigmoid(fr.au_logits);
  return out;
}

std::string report_to_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  if (report.has_expr) {
    j["expr"]["f1"] = report.expr.f1;
    j["expr"]["acc"] = report.expr.acc;
    j["expr"]["score"] = report.expr_score;
    j["expr"]["per_class_f1"] = report.expr.per_class_f1;
    auto& cm = j["expr"]["confusion"];
    for (const auto& row : report.expr.confusion) cm.push_back(row);
  }
  if (report.has_au) {
    j["au"]["f1"] = report.au.f1;
    j["au"]["acc"] = report.au.acc;
    j["au"]["score"] = report.au_score;
    j["au"]["per_au_f1"] = report.au.per_au_f1;
  }
  return j.dump(2) + "\n";
}

std::string report_to_table(const MetricsReport& report, const std::string& method_name) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3);
  os << std::left << std::setw(28) << "Method" << std::right << std::setw(10) << "F1_Score"
     << std::setw(10) << "Accuracy" << std::setw(10) << "Blend" << "\n";
  if (report.has_expr) {
    os << std::left << std::setw(28) << (method_name + " (expr)") << std::right
       << std::setw(10) << report.expr.f1 << std::setw(10) << report.expr.acc
       << std::setw(10) << report.expr_score << "\n";
  }
  if (report.has_au) {
    os << std::left << std::setw(28) << (method_name + " (au)") << std::right
       << std::setw(10) << report.au.f1 << std::setw(10) << report.au.acc
       << std::setw(10) << report.au_score << "\n";
  }
  return os.str();
}

}  // namespace emotask
