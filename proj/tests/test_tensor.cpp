#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "akhcr/tensor.hpp"
#include "testutil.hpp"

using namespace akhcr;
using testutil::naive_matmul;
using testutil::random_tensor;

TEST_CASE("create fills and validates") {
  Tensor zeros(Shape{2, 2});
  CHECK(zeros.size() == 4);
  for (std::int64_t i = 0; i < 4; ++i) CHECK(zeros[i] == 0.0f);

  Tensor vec(Shape{3}, std::vector<float>{1, 2, 3});
  CHECK(vec.at(0) == 1.0f);
  CHECK(vec.at(2) == 3.0f);

  CHECK_THROWS_AS(Tensor(Shape{2}, std::vector<float>{1, 2, 3}), ShapeError);
  CHECK_THROWS_AS((Shape{0, 3}), ShapeError);
}

TEST_CASE("row-major index and coordinate round-trip") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::int64_t> dims;
    const int rank = 1 + static_cast<int>(rng.below(4));
    for (int i = 0; i < rank; ++i) dims.push_back(1 + static_cast<std::int64_t>(rng.below(5)));
    Shape s(dims);
    const auto strides = s.strides();
    CHECK(strides.back() == 1);  // last axis fastest
    for (std::int64_t idx = 0; idx < s.numel(); ++idx) {
      const auto coord = coords_of(s, idx);
      std::int64_t manual = 0;
      for (int i = 0; i < rank; ++i) manual += coord[static_cast<std::size_t>(i)] * strides[static_cast<std::size_t>(i)];
      CHECK(manual == idx);
      CHECK(index_of(s, coord) == idx);
    }
  }
}

TEST_CASE("map2 elementwise and scalar broadcast") {
  Tensor a(Shape{2}, std::vector<float>{1, 2});
  Tensor b(Shape{2}, std::vector<float>{3, 4});
  const Tensor sum = add(a, b);
  CHECK(sum[0] == 4.0f);
  CHECK(sum[1] == 6.0f);

  Rng rng(3);
  const Tensor x = random_tensor<float>(Shape{3, 4}, rng);
  const Tensor zeros(Shape{3, 4});
  const Tensor prod = mul(x, zeros);
  for (std::int64_t i = 0; i < prod.size(); ++i) CHECK(prod[i] == 0.0f);
  const Tensor diff = sub(x, x);
  for (std::int64_t i = 0; i < diff.size(); ++i) CHECK(diff[i] == 0.0f);

  const Tensor scalar(Shape{1}, std::vector<float>{2});
  const Tensor doubled = mul(x, scalar);
  for (std::int64_t i = 0; i < x.size(); ++i) CHECK(doubled[i] == doctest::Approx(2.0f * x[i]));

  CHECK_THROWS_AS(add(a, Tensor(Shape{3})), ShapeError);
}

TEST_CASE("reduce sum, max and mean") {
  Tensor m(Shape{2, 2}, std::vector<float>{1, 2, 3, 4});
  const Tensor total = reduce(m, {0, 1}, ReduceOp::sum);
  CHECK(total.rank() == 0);
  CHECK(total[0] == 10.0f);

  Tensor m2(Shape{2, 2}, std::vector<float>{1, 5, 3, 4});
  const Tensor rows = reduce(m2, {1}, ReduceOp::max);
  CHECK(rows.shape == Shape{2});
  CHECK(rows[0] == 5.0f);
  CHECK(rows[1] == 4.0f);

  const Tensor constant(Shape{3, 5}, 2.5f);
  CHECK(reduce_all(constant, ReduceOp::mean) == doctest::Approx(2.5));

  CHECK_THROWS_AS(reduce(m, {2}, ReduceOp::sum), ShapeError);
  CHECK_THROWS_AS(reduce(m, {0, 0}, ReduceOp::sum), ShapeError);
}

TEST_CASE("reduce over middle axis keeps the others") {
  Rng rng(5);
  const Tensor t = random_tensor<float>(Shape{2, 3, 4}, rng);
  const Tensor reduced = reduce(t, {1}, ReduceOp::sum);
  CHECK(reduced.shape == Shape{2, 4});
  for (std::int64_t i = 0; i < 2; ++i)
    for (std::int64_t k = 0; k < 4; ++k) {
      float manual = 0.0f;
      for (std::int64_t j = 0; j < 3; ++j) manual += t.at(i, j, k);
      CHECK(reduced.at(i, k) == doctest::Approx(manual));
    }
}

TEST_CASE("matmul identity and hand product") {
  Tensor eye(Shape{2, 2}, std::vector<float>{1, 0, 0, 1});
  Tensor m(Shape{2, 2}, std::vector<float>{1, 2, 3, 4});
  const Tensor same = matmul(eye, m);
  for (std::int64_t i = 0; i < 4; ++i) CHECK(same[i] == m[i]);

  Tensor row(Shape{1, 2}, std::vector<float>{1, 2});
  Tensor col(Shape{2, 1}, std::vector<float>{3, 4});
  const Tensor prod = matmul(row, col);
  CHECK(prod.shape == Shape{1, 1});
  CHECK(prod[0] == doctest::Approx(11.0));

  CHECK_THROWS_AS(matmul(row, row), ShapeError);
}

TEST_CASE("matmul matches the naive oracle") {
  Rng rng(7);
  const Tensor a = random_tensor<float>(Shape{5, 7}, rng);
  const Tensor b = random_tensor<float>(Shape{7, 3}, rng);
  CHECK(testutil::max_rel_err(matmul(a, b), naive_matmul(a, b), 1.0) < 1e-6);

  // odd sizes exercise the tile tails
  for (int trial = 0; trial < 8; ++trial) {
    const std::int64_t m = 1 + static_cast<std::int64_t>(rng.below(40));
    const std::int64_t k = 1 + static_cast<std::int64_t>(rng.below(70));
    const std::int64_t n = 1 + static_cast<std::int64_t>(rng.below(50));
    const Tensor x = random_tensor<float>(Shape{m, k}, rng);
    const Tensor y = random_tensor<float>(Shape{k, n}, rng);
    CHECK(testutil::max_rel_err(matmul(x, y), naive_matmul(x, y), 1.0) < 1e-6);
  }

  const TensorD aw = random_tensor<double>(Shape{9, 17}, rng);
  const TensorD bw = random_tensor<double>(Shape{17, 5}, rng);
  CHECK(testutil::max_rel_err(matmul(aw, bw), naive_matmul(aw, bw), 1.0) < 1e-12);
}

TEST_CASE("matmul is associative within float tolerance") {
  Rng rng(9);
  const Tensor a = random_tensor<float>(Shape{4, 6}, rng);
  const Tensor b = random_tensor<float>(Shape{6, 5}, rng);
  const Tensor c = random_tensor<float>(Shape{5, 3}, rng);
  const Tensor left = matmul(matmul(a, b), c);
  const Tensor right = matmul(a, matmul(b, c));
  CHECK(testutil::max_rel_err(left, right, 1.0) < 1e-5);
}

TEST_CASE("transposed gemm variants match naive references") {
  Rng rng(13);
  for (int trial = 0; trial < 6; ++trial) {
    const std::int64_t m = 1 + static_cast<std::int64_t>(rng.below(30));
    const std::int64_t k = 1 + static_cast<std::int64_t>(rng.below(40));
    const std::int64_t n = 1 + static_cast<std::int64_t>(rng.below(35));
    const Tensor a = random_tensor<float>(Shape{k, m}, rng);  // stored transposed
    const Tensor b = random_tensor<float>(Shape{n, k}, rng);  // stored transposed
    Tensor out(Shape{m, n});
    detail::gemm(detail::Trans::yes, detail::Trans::yes, m, n, k, a.data.data(), m,
                 b.data.data(), k, out.data.data(), n);
    Tensor want(Shape{m, n});
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::int64_t p = 0; p < k; ++p)
          acc += static_cast<double>(a[p * m + i]) * static_cast<double>(b[j * k + p]);
        want[i * n + j] = static_cast<float>(acc);
      }
    CHECK(testutil::max_rel_err(out, want, 1.0) < 1e-6);
  }
}

TEST_CASE("pad_spatial geometry and sentinel") {
  Rng rng(21);
  const Tensor x = random_tensor<float>(Shape{2, 3, 4, 2}, rng);
  const Tensor same = pad_spatial(x, 0, 0, 0, 0, 0.0f);
  CHECK(same.shape == x.shape);
  for (std::int64_t i = 0; i < x.size(); ++i) CHECK(same[i] == x[i]);

  Tensor one(Shape{1, 1, 1, 1}, std::vector<float>{1});
  const Tensor padded = pad_spatial(one, 1, 1, 1, 1, 0.0f);
  CHECK(padded.shape == Shape{1, 3, 3, 1});
  CHECK(padded.at(0, 1, 1, 0) == 1.0f);
  float border_sum = 0.0f;
  for (std::int64_t i = 0; i < padded.size(); ++i) border_sum += padded[i];
  CHECK(border_sum == 1.0f);

  const float neg_inf = -std::numeric_limits<float>::infinity();
  const Tensor sentinel = pad_spatial(one, 1, 1, 1, 1, neg_inf);
  CHECK(reduce_all(sentinel, ReduceOp::max) == 1.0f);
}

TEST_CASE("he_init statistics and determinism") {
  Rng rng(42);
  const Tensor big = he_init<float>(Shape{1000000}, 2, rng);  // stddev sqrt(2/2) = 1
  double sum = 0.0;
  for (const float v : big.data) sum += v;
  const double mean = sum / static_cast<double>(big.size());
  CHECK(std::abs(mean) < 0.01);
  double sq = 0.0;
  for (const float v : big.data) sq += (v - mean) * (v - mean);
  const double stddev = std::sqrt(sq / static_cast<double>(big.size()));
  CHECK(stddev == doctest::Approx(1.0).epsilon(0.02));

  Rng r1(7), r2(7);
  const Tensor a = he_init<float>(Shape{4}, 8, r1);
  const Tensor b = he_init<float>(Shape{4}, 8, r2);
  for (std::int64_t i = 0; i < 4; ++i) CHECK(a[i] == b[i]);

  CHECK_THROWS_AS(he_init<float>(Shape{4}, 0, r1), RangeError);
}

TEST_CASE("operations keep finite inputs finite") {
  Rng rng(33);
  const Tensor a = random_tensor<float>(Shape{4, 6}, rng, -50.0, 50.0);
  const Tensor b = random_tensor<float>(Shape{6, 3}, rng, -50.0, 50.0);
  CHECK(all_finite(add(a, a)));
  CHECK(all_finite(mul(a, a)));
  CHECK(all_finite(matmul(a, b)));
  CHECK(all_finite(reduce(a, {0}, ReduceOp::sum)));
  CHECK(all_finite(pad_spatial(Tensor(Shape{1, 2, 2, 1}, 3.0f), 1, 0, 2, 1, 0.0f)));
}
