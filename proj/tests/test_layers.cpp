#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "akhcr/layers.hpp"
#include "testutil.hpp"

using namespace akhcr;
using testutil::random_tensor;

TEST_CASE("conv2d 1x1 identity kernel") {
  Rng rng(1);
  const Tensor x = random_tensor<float>(Shape{2, 4, 4, 1}, rng);
  ConvParams p{Tensor(Shape{1, 1, 1, 1}, std::vector<float>{1}), Tensor(Shape{1})};
  const Tensor y = conv2d_forward(x, p);
  CHECK(y.shape == x.shape);
  for (std::int64_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("conv2d 3x3 ones kernel counts the overlap") {
  const Tensor x(Shape{1, 3, 3, 1}, 1.0f);
  ConvParams p{Tensor(Shape{3, 3, 1, 1}, 1.0f), Tensor(Shape{1})};
  const Tensor y = conv2d_forward(x, p);
  CHECK(y.at(0, 1, 1, 0) == 9.0f);  // center: full window
  CHECK(y.at(0, 0, 1, 0) == 6.0f);  // edges: 6 cells in bounds
  CHECK(y.at(0, 1, 0, 0) == 6.0f);
  CHECK(y.at(0, 0, 0, 0) == 4.0f);  // corners: 4 cells
  CHECK(y.at(0, 2, 2, 0) == 4.0f);
}

TEST_CASE("conv2d matches the naive 7-loop oracle") {
  Rng rng(2);
  const Tensor x = random_tensor<float>(Shape{2, 8, 8, 3}, rng);
  ConvParams p{random_tensor<float>(Shape{3, 3, 3, 5}, rng),
               random_tensor<float>(Shape{5}, rng)};
  const Tensor fast = conv2d_forward(x, p);
  const Tensor slow = testutil::naive_conv2d(x, p.kernel, p.bias);
  CHECK(testutil::max_rel_err(fast, slow, 1.0) < 1e-5);

  ConvParams p5{random_tensor<float>(Shape{5, 5, 3, 4}, rng),
                random_tensor<float>(Shape{4}, rng)};
  CHECK(testutil::max_rel_err(conv2d_forward(x, p5),
                              testutil::naive_conv2d(x, p5.kernel, p5.bias), 1.0) < 1e-5);
}

TEST_CASE("conv2d rejects bad wiring") {
  Rng rng(3);
  const Tensor x = random_tensor<float>(Shape{1, 4, 4, 2}, rng);
  ConvParams wrong_channels{random_tensor<float>(Shape{3, 3, 3, 4}, rng), Tensor(Shape{4})};
  CHECK_THROWS_AS(conv2d_forward(x, wrong_channels), ShapeError);
  ConvParams even_kernel{random_tensor<float>(Shape{2, 2, 2, 4}, rng), Tensor(Shape{4})};
  CHECK_THROWS_AS(conv2d_forward(x, even_kernel), ShapeError);
}

TEST_CASE("conv2d backward analytic identities") {
  Rng rng(4);
  const Tensor x = random_tensor<float>(Shape{2, 5, 5, 3}, rng);
  ConvParams p{random_tensor<float>(Shape{3, 3, 3, 4}, rng),
               random_tensor<float>(Shape{4}, rng)};

  const Tensor zero_up(Shape{2, 5, 5, 4});
  const auto zero_grads = conv2d_backward(x, p, zero_up);
  for (const float v : zero_grads.dkernel.data) CHECK(v == 0.0f);
  for (const float v : zero_grads.dbias.data) CHECK(v == 0.0f);
  for (const float v : zero_grads.dx.data) CHECK(v == 0.0f);

  const Tensor up = random_tensor<float>(Shape{2, 5, 5, 4}, rng);
  const auto grads = conv2d_backward(x, p, up);
  const Tensor channel_sum = reduce(up, {0, 1, 2}, ReduceOp::sum);
  for (std::int64_t c = 0; c < 4; ++c)
    CHECK(grads.dbias[c] == doctest::Approx(channel_sum[c]).epsilon(1e-5));
}

TEST_CASE("maxpool 2x2 stride 2") {
  const Tensor x(Shape{1, 2, 2, 1}, std::vector<float>{1, 2, 3, 4});
  auto [y, cache] = maxpool_forward(x, 2, 2, Padding::valid);
  CHECK(y.shape == Shape{1, 1, 1, 1});
  CHECK(y[0] == 4.0f);
  CHECK(cache.argmax[0] == 3);
}

TEST_CASE("maxpool of a constant is the constant") {
  const Tensor x(Shape{2, 4, 4, 3}, 7.5f);
  auto [y, cache] = maxpool_forward(x, 2, 2, Padding::valid);
  CHECK(y.shape == Shape{2, 2, 2, 3});
  for (const float v : y.data) CHECK(v == 7.5f);
}

TEST_CASE("maxpool same padding preserves spatial extent at stride 1") {
  Rng rng(5);
  const Tensor x = random_tensor<float>(Shape{1, 16, 16, 4}, rng);
  auto [y, cache] = maxpool_forward(x, 3, 1, Padding::same);
  CHECK(y.shape == Shape{1, 16, 16, 4});

  // ceil semantics for strided same pooling
  const Tensor odd = random_tensor<float>(Shape{1, 7, 5, 2}, rng);
  auto [y2, c2] = maxpool_forward(odd, 2, 2, Padding::same);
  CHECK(y2.shape == Shape{1, 4, 3, 2});
}

TEST_CASE("maxpool backward scatters and conserves") {
  Rng rng(6);
  const Tensor x = random_tensor<float>(Shape{2, 4, 4, 2}, rng);
  auto [y, cache] = maxpool_forward(x, 2, 2, Padding::valid);
  const Tensor up = random_tensor<float>(Shape{2, 2, 2, 2}, rng);
  const Tensor dx = maxpool_backward(cache, up);
  CHECK(dx.shape == x.shape);

  // non-overlapping windows: at most one contribution per input cell
  double up_sum = 0.0, dx_sum = 0.0;
  std::int64_t touched = 0;
  for (const float v : up.data) up_sum += v;
  for (const float v : dx.data) {
    dx_sum += v;
    if (v != 0.0f) ++touched;
  }
  CHECK(dx_sum == doctest::Approx(up_sum).epsilon(1e-6));
  CHECK(touched <= up.size());
}

TEST_CASE("batchnorm normalizes per channel") {
  Rng rng(7);
  const Tensor x = random_tensor<float>(Shape{4, 3, 3, 2}, rng, -2.0, 5.0);
  BatchNormParams p{Tensor(Shape{2}, 1.0f), Tensor(Shape{2}), Tensor(Shape{2}),
                    Tensor(Shape{2}, 1.0f)};
  auto [y, cache] = batchnorm_forward(x, p, Mode::train);
  const std::int64_t rows = x.size() / 2;
  for (std::int64_t c = 0; c < 2; ++c) {
    double mean = 0.0;
    for (std::int64_t r = 0; r < rows; ++r) mean += y[r * 2 + c];
    mean /= static_cast<double>(rows);
    double var = 0.0;
    for (std::int64_t r = 0; r < rows; ++r) {
      const double d = y[r * 2 + c] - mean;
      var += d * d;
    }
    var /= static_cast<double>(rows);
    CHECK(std::abs(mean) < 1e-5);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("batchnorm zero-variance channel maps to beta") {
  Tensor x(Shape{4, 2}, 3.0f);  // constant everywhere
  BatchNormParams p{Tensor(Shape{2}, 2.0f),
                    Tensor(Shape{2}, std::vector<float>{0.5f, -1.0f}), Tensor(Shape{2}),
                    Tensor(Shape{2}, 1.0f)};
  auto [y, cache] = batchnorm_forward(x, p, Mode::train);
  for (std::int64_t r = 0; r < 4; ++r) {
    CHECK(y[r * 2 + 0] == doctest::Approx(0.5).epsilon(1e-4));
    CHECK(y[r * 2 + 1] == doctest::Approx(-1.0).epsilon(1e-4));
  }
}

TEST_CASE("batchnorm running stats and infer mode") {
  Rng rng(8);
  const Tensor x = random_tensor<float>(Shape{8, 3}, rng, 1.0, 3.0);
  BatchNormParams p{Tensor(Shape{3}, 1.0f), Tensor(Shape{3}), Tensor(Shape{3}),
                    Tensor(Shape{3}, 1.0f)};
  auto [y, cache] = batchnorm_forward(x, p, Mode::train);
  // running = 0.9 * old + 0.1 * batch
  for (std::int64_t c = 0; c < 3; ++c) {
    CHECK(p.running_mean[c] == doctest::Approx(0.1 * cache.mean[static_cast<std::size_t>(c)]).epsilon(1e-4));
    CHECK(p.running_var[c] < 1.0f);  // pulled toward the small batch variance
  }
  auto [y_infer, c2] = batchnorm_forward(x, p, Mode::infer);
  CHECK(y_infer.shape == x.shape);

  Tensor tiny(Shape{1, 3}, 1.0f);
  CHECK_THROWS_AS(batchnorm_forward(tiny, p, Mode::train), DataError);
  CHECK_NOTHROW(batchnorm_forward(tiny, p, Mode::infer));
}

TEST_CASE("batchnorm beta gradient is the channel sum of upstream") {
  Rng rng(9);
  const Tensor x = random_tensor<float>(Shape{6, 4}, rng);
  BatchNormParams p{Tensor(Shape{4}, 1.0f), Tensor(Shape{4}), Tensor(Shape{4}),
                    Tensor(Shape{4}, 1.0f)};
  auto [y, cache] = batchnorm_forward(x, p, Mode::train);
  const Tensor up = random_tensor<float>(Shape{6, 4}, rng);
  const auto grads = batchnorm_backward(cache, p.gamma, up);
  for (std::int64_t c = 0; c < 4; ++c) {
    double manual = 0.0;
    for (std::int64_t r = 0; r < 6; ++r) manual += up[r * 4 + c];
    CHECK(grads.dbeta[c] == doctest::Approx(manual).epsilon(1e-5));
  }

  const Tensor zero_up(Shape{6, 4});
  const auto zero_grads = batchnorm_backward(cache, p.gamma, zero_up);
  for (const float v : zero_grads.dgamma.data) CHECK(v == 0.0f);
  for (const float v : zero_grads.dx.data) CHECK(v == 0.0f);
}

TEST_CASE("relu clamps negatives and is idempotent") {
  const Tensor x(Shape{3}, std::vector<float>{-1, 0, 2});
  const Tensor y = relu(x);
  CHECK(y[0] == 0.0f);
  CHECK(y[1] == 0.0f);
  CHECK(y[2] == 2.0f);

  Rng rng(10);
  const Tensor r = random_tensor<float>(Shape{100}, rng);
  const Tensor once = relu(r);
  const Tensor twice = relu(once);
  for (std::int64_t i = 0; i < r.size(); ++i) CHECK(once[i] == twice[i]);

  const Tensor up(Shape{3}, 1.0f);
  const Tensor dx = relu_backward(x, up);
  CHECK(dx[0] == 0.0f);
  CHECK(dx[1] == 0.0f);  // subgradient at 0 is 0
  CHECK(dx[2] == 1.0f);
}

TEST_CASE("dropout identity cases") {
  Rng rng(11);
  const Tensor x = random_tensor<float>(Shape{50}, rng);
  auto zero_rate = dropout_forward(x, 0.0, Mode::train, rng);
  for (std::int64_t i = 0; i < x.size(); ++i) CHECK(zero_rate.out[i] == x[i]);
  auto infer = dropout_forward(x, 0.5, Mode::infer, rng);
  for (std::int64_t i = 0; i < x.size(); ++i) CHECK(infer.out[i] == x[i]);
  CHECK_THROWS_AS(dropout_forward(x, 1.0, Mode::train, rng), RangeError);
}

TEST_CASE("inverted dropout preserves the mean") {
  Rng rng(12);
  const Tensor ones(Shape{1000000}, 1.0f);
  auto result = dropout_forward(ones, 0.5, Mode::train, rng);
  double sum = 0.0;
  for (const float v : result.out.data) sum += v;
  const double mean = sum / static_cast<double>(ones.size());
  CHECK(mean == doctest::Approx(1.0).epsilon(0.02));

  // backward keeps the same mask and scale
  const Tensor up(Shape{1000000}, 1.0f);
  const Tensor dx = dropout_backward(result.mask, 0.5, up);
  for (std::int64_t i = 0; i < 100; ++i)
    CHECK(dx[i] == (result.mask[static_cast<std::size_t>(i)] ? 2.0f : 0.0f));
}

TEST_CASE("concat_channels shapes and round trip") {
  Rng rng(13);
  std::vector<Tensor> parts;
  parts.push_back(random_tensor<float>(Shape{1, 16, 16, 128}, rng));
  parts.push_back(random_tensor<float>(Shape{1, 16, 16, 128}, rng));
  parts.push_back(random_tensor<float>(Shape{1, 16, 16, 128}, rng));
  parts.push_back(random_tensor<float>(Shape{1, 16, 16, 64}, rng));
  const Tensor merged = concat_channels(parts);
  CHECK(merged.shape == Shape{1, 16, 16, 448});

  const auto back = split_channels(merged, {128, 128, 128, 64});
  REQUIRE(back.size() == 4);
  for (std::size_t k = 0; k < 4; ++k) {
    REQUIRE(back[k].shape == parts[k].shape);
    for (std::int64_t i = 0; i < back[k].size(); ++i) CHECK(back[k][i] == parts[k][i]);
  }

  const Tensor single = concat_channels(std::vector<Tensor>{parts[3]});
  for (std::int64_t i = 0; i < single.size(); ++i) CHECK(single[i] == parts[3][i]);

  std::vector<Tensor> bad;
  bad.push_back(random_tensor<float>(Shape{1, 16, 16, 8}, rng));
  bad.push_back(random_tensor<float>(Shape{1, 8, 16, 8}, rng));
  CHECK_THROWS_AS(concat_channels(bad), ShapeError);
}

TEST_CASE("dense forward identities") {
  Tensor x(Shape{1, 2}, std::vector<float>{1, 2});
  DenseParams ident{Tensor(Shape{2, 2}, std::vector<float>{1, 0, 0, 1}),
                    Tensor(Shape{2}, std::vector<float>{1, 1})};
  const Tensor y = dense_forward(x, ident);
  CHECK(y.at(0, 0) == 2.0f);
  CHECK(y.at(0, 1) == 3.0f);

  DenseParams zero_bias{Tensor(Shape{2, 2}, std::vector<float>{1, 0, 0, 1}),
                        Tensor(Shape{2})};
  const Tensor same = dense_forward(x, zero_bias);
  CHECK(same.at(0, 0) == 1.0f);
  CHECK(same.at(0, 1) == 2.0f);

  CHECK_THROWS_AS(dense_forward(Tensor(Shape{1, 3}), ident), ShapeError);
}

TEST_CASE("results are bit-identical for any worker count") {
  Rng rng(15);
  const Tensor x = random_tensor<float>(Shape{3, 9, 9, 4}, rng);
  ConvParams p{random_tensor<float>(Shape{3, 3, 4, 6}, rng),
               random_tensor<float>(Shape{6}, rng)};
  const Tensor a2 = random_tensor<float>(Shape{37, 53}, rng);
  const Tensor b2 = random_tensor<float>(Shape{53, 29}, rng);
  const Tensor up = random_tensor<float>(Shape{3, 9, 9, 6}, rng);

  set_worker_count(1);
  const Tensor conv_serial = conv2d_forward(x, p);
  const auto grads_serial = conv2d_backward(x, p, up);
  const Tensor mm_serial = matmul(a2, b2);

  set_worker_count(4);
  const Tensor conv_parallel = conv2d_forward(x, p);
  const auto grads_parallel = conv2d_backward(x, p, up);
  const Tensor mm_parallel = matmul(a2, b2);
  set_worker_count(0);

  for (std::int64_t i = 0; i < conv_serial.size(); ++i)
    CHECK(conv_serial[i] == conv_parallel[i]);
  for (std::int64_t i = 0; i < mm_serial.size(); ++i)
    CHECK(mm_serial[i] == mm_parallel[i]);
  for (std::int64_t i = 0; i < grads_serial.dkernel.size(); ++i)
    CHECK(grads_serial.dkernel[i] == grads_parallel.dkernel[i]);
  for (std::int64_t i = 0; i < grads_serial.dx.size(); ++i)
    CHECK(grads_serial.dx[i] == grads_parallel.dx[i]);
}

TEST_CASE("flatten is a row-major reshape") {
  Rng rng(14);
  const Tensor x = random_tensor<float>(Shape{2, 1, 1, 512}, rng);
  const Tensor flat = flatten(x);
  CHECK(flat.shape == Shape{2, 512});
  CHECK(flat.size() == x.size());
  const Tensor back = unflatten(flat, x.shape);
  for (std::int64_t i = 0; i < x.size(); ++i) CHECK(back[i] == x[i]);

  const Tensor y = random_tensor<float>(Shape{3, 4, 5, 2}, rng);
  CHECK(flatten(y).shape == Shape{3, 40});
}
