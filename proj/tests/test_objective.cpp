#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "akhcr/objective.hpp"
#include "testutil.hpp"

using namespace akhcr;
using testutil::random_tensor;

TEST_CASE("softmax of equal logits is uniform") {
  const Tensor logits(Shape{1, 4});
  const Tensor p = softmax(logits);
  for (std::int64_t j = 0; j < 4; ++j) CHECK(p[j] == doctest::Approx(0.25));
}

TEST_CASE("softmax matches direct exponentiation") {
  const Tensor logits(Shape{1, 3}, std::vector<float>{1, 2, 3});
  const Tensor p = softmax(logits);
  CHECK(p[0] == doctest::Approx(0.0900).epsilon(2e-3));
  CHECK(p[1] == doctest::Approx(0.2447).epsilon(2e-3));
  CHECK(p[2] == doctest::Approx(0.6652).epsilon(2e-3));
  CHECK(std::abs(p[0] + p[1] + p[2] - 1.0f) < 1e-6);
}

TEST_CASE("softmax is shift invariant") {
  Rng rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor s = random_tensor<float>(Shape{3, 6}, rng, -4.0, 4.0);
    Tensor shifted = s;
    const float c = static_cast<float>(rng.uniform() * 20.0 - 10.0);
    for (auto& v : shifted.data) v += c;
    const Tensor a = softmax(s), b = softmax(shifted);
    for (std::int64_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-6);
  }
}

TEST_CASE("softmax stays a distribution at extreme logits") {
  const Tensor s(Shape{2, 3}, std::vector<float>{1e4f, -1e4f, 0.0f, -1e4f, -1e4f, 1e4f});
  const Tensor p = softmax(s);
  for (std::int64_t r = 0; r < 2; ++r) {
    double sum = 0.0;
    for (std::int64_t j = 0; j < 3; ++j) {
      CHECK(p[r * 3 + j] >= 0.0f);
      CHECK(p[r * 3 + j] <= 1.0f);
      sum += p[r * 3 + j];
    }
    CHECK(std::abs(sum - 1.0) < 1e-6);
  }

  // argmax is preserved
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor logits = random_tensor<float>(Shape{1, 8}, rng, -5.0, 5.0);
    const Tensor probs = softmax(logits);
    std::int64_t arg_l = 0, arg_p = 0;
    for (std::int64_t j = 1; j < 8; ++j) {
      if (logits[j] > logits[arg_l]) arg_l = j;
      if (probs[j] > probs[arg_p]) arg_p = j;
    }
    CHECK(arg_l == arg_p);
  }

  Tensor bad(Shape{1, 2});
  bad[0] = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(softmax(bad), NumericError);
}

TEST_CASE("cross-entropy values") {
  // correct class with probability 1
  Tensor sure(Shape{1, 3}, std::vector<float>{1, 0, 0});
  CHECK(cce(sure, std::vector<int>{0}) == doctest::Approx(0.0).epsilon(1e-9));

  // uniform over 84 classes
  Tensor uniform84(Shape{2, 84}, 1.0f / 84.0f);
  CHECK(cce(uniform84, std::vector<int>{5, 83}) ==
        doctest::Approx(std::log(84.0)).epsilon(1e-3 / 4.4308));

  Tensor uniform2(Shape{1, 2}, 0.5f);
  CHECK(cce(uniform2, std::vector<int>{1}) == doctest::Approx(std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("cross-entropy clamps zero probabilities with a warning count") {
  Tensor p(Shape{1, 2}, std::vector<float>{0.0f, 1.0f});
  std::int64_t clamped = 0;
  const double loss = cce(p, std::vector<int>{0}, &clamped);
  CHECK(clamped == 1);
  CHECK(loss == doctest::Approx(-std::log(1e-12)).epsilon(1e-6));

  CHECK_THROWS_AS(cce(p, std::vector<int>{2}), RangeError);
  CHECK_THROWS_AS(cce(p, std::vector<int>{0, 1}), ShapeError);
}

TEST_CASE("cross-entropy accepts one-hot labels") {
  Tensor probs(Shape{2, 3}, std::vector<float>{0.7f, 0.2f, 0.1f, 0.1f, 0.8f, 0.1f});
  Tensor onehot(Shape{2, 3}, std::vector<float>{1, 0, 0, 0, 1, 0});
  CHECK(cce(probs, onehot) ==
        doctest::Approx(cce(probs, std::vector<int>{0, 1})).epsilon(1e-9));
}

TEST_CASE("l2 penalty evaluates the formula") {
  ParamStore store;
  store["w"] = Tensor(Shape{2, 2}, 1.0f);

  LossConfig off;
  off.lambda = 0.0;
  off.regularized = {"w"};
  CHECK(l2_penalty(store, off, 10) == 0.0);

  LossConfig on;
  on.lambda = 0.1;
  on.regularized = {"w"};
  CHECK(l2_penalty(store, on, 10) == doctest::Approx(0.02));  // (0.1/20) * 4

  store["w"] = Tensor(Shape{2, 2});
  CHECK(l2_penalty(store, on, 10) == 0.0);

  LossConfig unknown;
  unknown.lambda = 0.1;
  unknown.regularized = {"nope"};
  CHECK_THROWS_AS(l2_penalty(store, unknown, 10), ConfigError);
  CHECK_THROWS_AS(l2_penalty(store, on, 0), RangeError);
}

TEST_CASE("reg loss is monotone in lambda") {
  Rng rng(3);
  ParamStore store;
  store["w"] = random_tensor<float>(Shape{5, 5}, rng);
  double prev = -1.0;
  for (double lambda : {0.0, 1e-4, 1e-3, 1e-2, 1e-1}) {
    LossConfig cfg;
    cfg.lambda = lambda;
    cfg.regularized = {"w"};
    const double reg = l2_penalty(store, cfg, 7);
    CHECK(reg >= prev);
    prev = reg;
  }
}

TEST_CASE("loss_and_logit_grad composes data and reg terms") {
  Rng rng(4);
  ParamStore store;
  store["w"] = random_tensor<float>(Shape{3, 3}, rng);
  LossConfig cfg;
  cfg.lambda = 0.01;
  cfg.regularized = {"w"};

  const Tensor logits = random_tensor<float>(Shape{4, 6}, rng, -2.0, 2.0);
  const std::vector<int> labels = {0, 5, 2, 3};
  const auto [report, grad] = loss_and_logit_grad(logits, labels, store, cfg);
  CHECK(report.total == doctest::Approx(report.data_loss + report.reg_loss));
  CHECK(report.data_loss >= 0.0);
  CHECK(report.reg_loss >= 0.0);
  CHECK(grad.shape == logits.shape);

  for (std::int64_t r = 0; r < 4; ++r) {
    double row_sum = 0.0;
    for (std::int64_t j = 0; j < 6; ++j) row_sum += grad[r * 6 + j];
    CHECK(std::abs(row_sum) < 1e-6);
  }
}

TEST_CASE("saturated correct predictions have near-zero gradient") {
  Tensor logits(Shape{2, 3});
  logits.at(0, 1) = 100.0f;
  logits.at(1, 2) = 100.0f;
  ParamStore store;
  const LossConfig cfg;
  const auto [report, grad] = loss_and_logit_grad(logits, {1, 2}, store, cfg);
  CHECK(report.data_loss < 1e-6);
  for (const float g : grad.data) CHECK(std::abs(g) < 1e-6);
}
