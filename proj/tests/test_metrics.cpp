#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "emotask/metrics.hpp"
#include "emotask/rng.hpp"

using namespace emotask;

namespace {

// Brute-force one-vs-rest counter, independent of the metrics module.
struct OracleExpr {
  double acc;
  double macro_f1;
};

OracleExpr oracle_expr(const std::vector<int>& preds, const std::vector<int>& truth) {
  std::size_t n = preds.size();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) correct += preds[i] == truth[i];
  double f1_sum = 0.0;
  for (int c = 0; c < 7; ++c) {
    long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      bool pc = preds[i] == c, tc = truth[i] == c;
      if (pc && tc) ++tp;
      if (pc && !tc) ++fp;
      if (!pc && tc) ++fn;
    }
    double prec = (tp + fp) ? static_cast<double>(tp) / (tp + fp) : 0.0;
    double rec = (tp + fn) ? static_cast<double>(tp) / (tp + fn) : 0.0;
    f1_sum += (prec + rec > 0.0) ? 2 * prec * rec / (prec + rec) : 0.0;
  }
  return {static_cast<double>(correct) / n, f1_sum / 7.0};
}

struct OracleAu {
  double acc;
  double mean_f1;
};

OracleAu oracle_au(const Tensor& probs, const Tensor& truth, double thr) {
  std::size_t n = probs.shape[0];
  long correct = 0;
  double f1_sum = 0.0;
  for (std::size_t j = 0; j < 12; ++j) {
    long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      int p = probs.at2(i, j) >= thr ? 1 : 0;
      int y = static_cast<int>(truth.at2(i, j));
      correct += p == y;
      if (p && y) ++tp;
      if (p && !y) ++fp;
      if (!p && y) ++fn;
    }
    double prec = (tp + fp) ? static_cast<double>(tp) / (tp + fp) : 0.0;
    double rec = (tp + fn) ? static_cast<double>(tp) / (tp + fn) : 0.0;
    f1_sum += (prec + rec > 0.0) ? 2 * prec * rec / (prec + rec) : 0.0;
  }
  return {static_cast<double>(correct) / (12.0 * n), f1_sum / 12.0};
}

}  // namespace

TEST_CASE("perfect predictions score 1 everywhere") {
  std::vector<int> truth = {0, 1, 2, 3, 4, 5, 6, 0, 3};
  ExprMetrics m = expr_metrics(truth, truth);
  CHECK(m.f1 == 1.0);
  CHECK(m.acc == 1.0);
}

TEST_CASE("worked confusion example") {
  std::vector<int> truth = {0, 0, 1, 1};
  std::vector<int> preds = {0, 1, 1, 1};
  ExprMetrics m = expr_metrics(preds, truth);
  CHECK(m.acc == 0.75);
  CHECK(m.per_class_f1[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(m.per_class_f1[1] == doctest::Approx(0.8).epsilon(1e-12));
  for (int c = 2; c < 7; ++c) CHECK(m.per_class_f1[c] == 0.0);
  CHECK(m.f1 == doctest::Approx((2.0 / 3.0 + 0.8) / 7.0).epsilon(1e-12));
  CHECK(m.confusion[0][1] == 1);
  CHECK(m.confusion[1][1] == 2);
}

TEST_CASE("single correct sample: absent classes score zero") {
  ExprMetrics m = expr_metrics({4}, {4});
  CHECK(m.acc == 1.0);
  CHECK(m.f1 == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
}

TEST_CASE("expr metrics reject mismatched or invalid inputs") {
  CHECK_THROWS_AS(expr_metrics({0, 1}, {0}), ContractError);
  CHECK_THROWS_AS(expr_metrics({}, {}), ContractError);
  CHECK_THROWS_AS(expr_metrics({7}, {0}), DataError);
}

TEST_CASE("au threshold ties go positive") {
  Tensor probs = Tensor::zeros({2, 12});
  probs.fill(0.5);
  Tensor truth = Tensor::zeros({2, 12});
  AuMetrics m = au_metrics(probs, truth, 0.5);
  CHECK(m.acc == 0.0);  // everything predicted 1 against all-zero truth
  for (double f : m.per_au_f1) CHECK(f == 0.0);

  truth.fill(1.0);
  m = au_metrics(probs, truth, 0.5);
  CHECK(m.acc == 1.0);
  CHECK(m.f1 == 1.0);
}

TEST_CASE("au metrics match a hand-built 3-sample case") {
  Tensor probs = Tensor::zeros({3, 12});
  Tensor truth = Tensor::zeros({3, 12});
  Rng rng(17);
  for (double& v : probs.data) v = rng.uniform01();
  for (double& v : truth.data) v = rng.bernoulli(0.4) ? 1.0 : 0.0;
  AuMetrics m = au_metrics(probs, truth, 0.5);
  OracleAu o = oracle_au(probs, truth, 0.5);
  CHECK(std::abs(m.acc - o.acc) <= 1e-12);
  CHECK(std::abs(m.f1 - o.mean_f1) <= 1e-12);
}

TEST_CASE("oracle equivalence on random instances") {
  Rng rng(101);
  for (int it = 0; it < 1000; ++it) {
    std::size_t n = 1 + rng.uniform_index(50);
    std::vector<int> preds(n), truth(n);
    for (std::size_t i = 0; i < n; ++i) {
      preds[i] = static_cast<int>(rng.uniform_index(7));
      truth[i] = static_cast<int>(rng.uniform_index(7));
    }
    ExprMetrics em = expr_metrics(preds, truth);
    OracleExpr oe = oracle_expr(preds, truth);
    CHECK(std::abs(em.acc - oe.acc) <= 1e-12);
    CHECK(std::abs(em.f1 - oe.macro_f1) <= 1e-12);

    Tensor probs = Tensor::zeros({n, 12});
    Tensor au_truth = Tensor::zeros({n, 12});
    for (double& v : probs.data) v = rng.uniform01();
    for (double& v : au_truth.data) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
    AuMetrics am = au_metrics(probs, au_truth, 0.5);
    OracleAu oa = oracle_au(probs, au_truth, 0.5);
    CHECK(std::abs(am.acc - oa.acc) <= 1e-12);
    CHECK(std::abs(am.f1 - oa.mean_f1) <= 1e-12);
  }
}

TEST_CASE("metrics are invariant under joint permutation") {
  Rng rng(55);
  std::size_t n = 40;
  std::vector<int> preds(n), truth(n);
  for (std::size_t i = 0; i < n; ++i) {
    preds[i] = static_cast<int>(rng.uniform_index(7));
    truth[i] = static_cast<int>(rng.uniform_index(7));
  }
  ExprMetrics before = expr_metrics(preds, truth);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<int> p2(n), t2(n);
  for (std::size_t i = 0; i < n; ++i) {
    p2[i] = preds[order[i]];
    t2[i] = truth[order[i]];
  }
  ExprMetrics after = expr_metrics(p2, t2);
  CHECK(before.f1 == after.f1);
  CHECK(before.acc == after.acc);
}

TEST_CASE("blended scores reproduce the published blends") {
  struct Row {
    double f1, acc, blend;
    bool is_expr;
  };
  // expression rows then AU rows
  std::vector<Row> rows = {
      {0.3, 0.5, 0.366, true},    {0.395, 0.598, 0.462, true},
      {0.494, 0.684, 0.556, true}, {0.675, 0.791, 0.713, true},
      {0.724, 0.826, 0.757, true}, {0.22, 0.4, 0.31, false},
      {0.439, 0.878, 0.659, false}, {0.427, 0.883, 0.655, false},
      {0.566, 0.895, 0.731, false},
  };
  for (const auto& r : rows) {
    BlendedScores s = r.is_expr ? blended_scores(r.f1, r.acc, 0, 0)
                                : blended_scores(0, 0, r.f1, r.acc);
    double got = r.is_expr ? s.expr_score : s.au_score;
    CHECK(std::abs(got - r.blend) <= 0.001);
  }
  CHECK_THROWS_AS(blended_scores(1.5, 0, 0, 0), ContractError);
}

TEST_CASE("metrics and blends stay in [0,1]") {
  Rng rng(77);
  for (int it = 0; it < 200; ++it) {
    std::size_t n = 1 + rng.uniform_index(30);
    std::vector<int> preds(n), truth(n);
    for (std::size_t i = 0; i < n; ++i) {
      preds[i] = static_cast<int>(rng.uniform_index(7));
      truth[i] = static_cast<int>(rng.uniform_index(7));
    }
    ExprMetrics m = expr_metrics(preds, truth);
    CHECK(m.f1 >= 0.0);
    CHECK(m.f1 <= 1.0);
    CHECK(m.acc >= 0.0);
    CHECK(m.acc <= 1.0);
    BlendedScores s = blended_scores(m.f1, m.acc, m.f1, m.acc);
    CHECK(s.expr_score >= 0.0);
    CHECK(s.expr_score <= 1.0);
    CHECK(s.au_score >= 0.0);
    CHECK(s.au_score <= 1.0);
  }
}

TEST_CASE("predict ties: zero logits give class 0 and all AU bits on at 0.5") {
  ModelConfig c = mlp_config({5}, 3, 4);
  ModelParams m = build_model(c, 1, 0.0);  // all-zero weights
  Tensor batch = Tensor::zeros({2, 5});
  batch.data = {1, -1, 0.5, 0, 2, -2, 1, 1, 0, 0};
  PredictionSet ps = predict(m, batch);
  for (int p : ps.expr_pred) CHECK(p == 0);
  for (double p : ps.au_probs.data) CHECK(p == 0.5);
}

TEST_CASE("predict is deterministic") {
  ModelConfig c = mlp_config({5}, 3, 4);
  ModelParams m = build_model(c, 8, std::sqrt(3.0));
  Tensor batch = Tensor::zeros({100, 5});
  Rng rng(4);
  for (double& v : batch.data) v = rng.normal();
  PredictionSet a = predict(m, batch);
  PredictionSet b = predict(m, batch);
  CHECK(a.expr_pred == b.expr_pred);
  CHECK(a.au_probs.data == b.au_probs.data);
}

TEST_CASE("report serialization carries the blend identity") {
  MetricsReport r;
  r.has_expr = true;
  r.expr.f1 = 0.3;
  r.expr.acc = 0.5;
  r.has_au = true;
  r.au.f1 = 0.22;
  r.au.acc = 0.4;
  BlendedScores s = blended_scores(r.expr.f1, r.expr.acc, r.au.f1, r.au.acc);
  r.expr_score = s.expr_score;
  r.au_score = s.au_score;
  std::string json = report_to_json(r);
  CHECK(json.find("\"f1\": 0.3") != std::string::npos);
  std::string table = report_to_table(r, "Baseline");
  CHECK(table.find("0.366") != std::string::npos);
  CHECK(table.find("0.310") != std::string::npos);
  CHECK(table.find("F1_Score") != std::string::npos);
}
