#include <array>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "emotask/losses.hpp"
#include "emotask/netcore.hpp"
#include "emotask/rng.hpp"

using namespace emotask;

namespace {

constexpr double kLn2 = 0.6931471805599453;

// logits with softmax probability p at the target and the rest uniform
Tensor logits_with_target_prob(double p, int target) {
  Tensor z = Tensor::zeros({1, 7});
  // e^z / (e^z + 6) = p  =>  z = ln(6p / (1-p))
  z.data[target] = std::log(6.0 * p / (1.0 - p));
  return z;
}

// independent plain cross-entropy, straight from the definition
double oracle_cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
  std::size_t n = logits.shape[0];
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double mx = logits.at2(i, 0);
    for (std::size_t j = 1; j < 7; ++j) mx = std::max(mx, logits.at2(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < 7; ++j) z += std::exp(logits.at2(i, j) - mx);
    double log_p = logits.at2(i, targets[i]) - mx - std::log(z);
    total += -log_p;
  }
  return total / static_cast<double>(n);
}

}  // namespace

TEST_CASE("focal loss at gamma 0 is cross-entropy: p_target 0.5 gives ln 2") {
  FocalConfig cfg;
  cfg.gamma = 0.0;
  LossResult r = focal_loss(logits_with_target_prob(0.5, 2), {2}, cfg);
  CHECK(r.loss == doctest::Approx(kLn2).epsilon(1e-12));
}

TEST_CASE("focal loss at gamma 2, p_target 0.5 gives 0.25 ln 2") {
  // independent scalar evaluation: (1-0.5)^2 * (-ln 0.5) = 0.17328679513998632
  FocalConfig cfg;
  cfg.gamma = 2.0;
  LossResult r = focal_loss(logits_with_target_prob(0.5, 0), {0}, cfg);
  CHECK(r.loss == doctest::Approx(0.17328679513998632).epsilon(1e-12));
}

TEST_CASE("confident correct prediction gives ~zero loss and gradient") {
  FocalConfig cfg;
  Tensor z = Tensor::zeros({1, 7});
  z.data[3] = 1000.0;
  LossResult r = focal_loss(z, {3}, cfg);
  CHECK(r.loss <= 1e-9);
  for (double g : r.logit_grads.data) CHECK(std::abs(g) <= 1e-9);
}

TEST_CASE("focal reduces to mean cross-entropy at gamma 0, uniform alpha") {
  FocalConfig cfg;
  cfg.gamma = 0.0;
  Rng rng(42);
  for (int it = 0; it < 1000; ++it) {
    std::size_t n = 1 + rng.uniform_index(8);
    Tensor z = Tensor::zeros({n, 7});
    for (double& v : z.data) v = rng.normal(0.0, 3.0);
    std::vector<int> targets(n);
    for (auto& t : targets) t = static_cast<int>(rng.uniform_index(7));
    LossResult r = focal_loss(z, targets, cfg);
    CHECK(std::abs(r.loss - oracle_cross_entropy(z, targets)) <= 1e-12);
  }
}

TEST_CASE("focal loss strictly decreases in p_target") {
  FocalConfig cfg;
  cfg.gamma = 2.0;
  double prev = 1e300;
  for (double p = 0.05; p < 0.999; p += 0.05) {
    LossResult r = focal_loss(logits_with_target_prob(p, 1), {1}, cfg);
    CHECK(r.loss < prev);
    prev = r.loss;
  }
}

TEST_CASE("per-sample focal loss is non-increasing in gamma") {
  Rng rng(7);
  for (int it = 0; it < 200; ++it) {
    double p = 0.01 + 0.98 * rng.uniform01();
    Tensor z = logits_with_target_prob(p, 4);
    double prev = 1e300;
    for (double gamma : {0.0, 0.5, 1.0, 2.0, 5.0}) {
      FocalConfig cfg;
      cfg.gamma = gamma;
      double loss = focal_loss(z, {4}, cfg).loss;
      CHECK(loss <= prev + 1e-15);
      if (p > 0.0 && p < 1.0 && gamma > 0.0) CHECK(loss < prev);
      prev = loss;
    }
  }
}

TEST_CASE("focal logit gradients match finite differences") {
  Rng rng(11);
  for (double gamma : {0.0, 0.7, 2.0}) {
    FocalConfig cfg;
    cfg.gamma = gamma;
    cfg.alpha = {0.5, 1.0, 1.5, 1.0, 2.0, 1.0, 0.25};
    Tensor z = Tensor::zeros({3, 7});
    for (double& v : z.data) v = rng.normal(0.0, 2.0);
    std::vector<int> targets = {0, 4, 6};
    LossResult r = focal_loss(z, targets, cfg);
    double h = 1e-6;
    for (std::size_t i = 0; i < z.size(); ++i) {
      double orig = z.data[i];
      z.data[i] = orig + h;
      double lp = focal_loss(z, targets, cfg).loss;
      z.data[i] = orig - h;
      double lm = focal_loss(z, targets, cfg).loss;
      z.data[i] = orig;
      double fd = (lp - lm) / (2 * h);
      double an = r.logit_grads.data[i];
      CHECK(std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1.0}) < 1e-6);
    }
  }
}

TEST_CASE("focal rejects out-of-range targets") {
  FocalConfig cfg;
  Tensor z = Tensor::zeros({2, 7});
  CHECK_THROWS_WITH_AS(focal_loss(z, {0, 7}, cfg), doctest::Contains("record 1"), DataError);
  CHECK_THROWS_AS(focal_loss(z, {-1, 0}, cfg), DataError);
}

TEST_CASE("bce at p = 0.5 is ln 2 for any binary targets") {
  Tensor z = Tensor::zeros({3, 12});
  Tensor y = Tensor::zeros({3, 12});
  Rng rng(5);
  for (double& v : y.data) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
  LossResult r = bce_loss(z, y);
  CHECK(std::abs(r.loss - kLn2) <= 1e-12);
}

TEST_CASE("bce single-cell value: p 0.9 with y 1 costs -ln 0.9") {
  Tensor z = Tensor::zeros({1, 12});
  Tensor y = Tensor::zeros({1, 12});
  for (double& v : z.data) v = std::log(9.0);  // sigmoid = 0.9 everywhere
  y.fill(1.0);
  LossResult r = bce_loss(z, y);
  CHECK(r.loss == doctest::Approx(0.10536051565782628).epsilon(1e-12));
}

TEST_CASE("bce saturated perfect prediction is ~zero") {
  Tensor z = Tensor::zeros({2, 12});
  Tensor y = Tensor::zeros({2, 12});
  Rng rng(9);
  for (std::size_t i = 0; i < y.size(); ++i) {
    y.data[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    z.data[i] = y.data[i] == 1.0 ? 1000.0 : -1000.0;
  }
  CHECK(bce_loss(z, y).loss <= 1e-9);
}

TEST_CASE("bce logit gradients match finite differences and (p-y)/(12n)") {
  Rng rng(13);
  Tensor z = Tensor::zeros({2, 12});
  Tensor y = Tensor::zeros({2, 12});
  for (double& v : z.data) v = rng.normal(0.0, 2.0);
  for (double& v : y.data) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
  LossResult r = bce_loss(z, y);
  Tensor p = sigmoid(z);
  double h = 1e-6;
  for (std::size_t i = 0; i < z.size(); ++i) {
    CHECK(r.logit_grads.data[i] ==
          doctest::Approx((p.data[i] - y.data[i]) / 24.0).epsilon(1e-12));
    double orig = z.data[i];
    z.data[i] = orig + h;
    double lp = bce_loss(z, y).loss;
    z.data[i] = orig - h;
    double lm = bce_loss(z, y).loss;
    z.data[i] = orig;
    double fd = (lp - lm) / (2 * h);
    CHECK(std::abs(r.logit_grads.data[i] - fd) /
              std::max({std::abs(fd), std::abs(r.logit_grads.data[i]), 1.0}) <
          1e-6);
  }
}

TEST_CASE("bce rejects non-binary targets") {
  Tensor z = Tensor::zeros({1, 12});
  Tensor y = Tensor::zeros({1, 12});
  y.data[3] = 0.5;
  CHECK_THROWS_AS(bce_loss(z, y), DataError);
}

TEST_CASE("losses are nonnegative on random inputs") {
  Rng rng(99);
  FocalConfig cfg;
  for (int it = 0; it < 300; ++it) {
    Tensor z = Tensor::zeros({2, 7});
    for (double& v : z.data) v = rng.normal(0.0, 20.0);
    std::vector<int> t = {static_cast<int>(rng.uniform_index(7)),
                          static_cast<int>(rng.uniform_index(7))};
    CHECK(focal_loss(z, t, cfg).loss >= 0.0);
    Tensor za = Tensor::zeros({2, 12});
    Tensor ya = Tensor::zeros({2, 12});
    for (double& v : za.data) v = rng.normal(0.0, 20.0);
    for (double& v : ya.data) v = rng.bernoulli(0.3) ? 1.0 : 0.0;
    CHECK(bce_loss(za, ya).loss >= 0.0);
  }
}

TEST_CASE("combined loss is the plain sum") {
  CHECK(combined_loss(0.5, 0.25) == 0.75);
  CHECK(combined_loss(0.0, 0.0) == 0.0);
  CHECK(combined_loss(kLn2, kLn2) == doctest::Approx(2 * kLn2).epsilon(1e-15));
  CHECK_THROWS_AS(combined_loss(-0.1, 0.0), ContractError);
}
