#include <doctest.h>

#include "cosrec/rng.hpp"
#include "cosrec/tensor.hpp"

using namespace cosrec;

namespace {

template <typename T>
Tensor<T> naive_matmul(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> c({a.dim(0), b.dim(1)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < b.dim(1); ++j) {
      double s = 0;
      for (std::size_t k = 0; k < a.dim(1); ++k) s += double(a.at(i, k)) * double(b.at(k, j));
      c.at(i, j) = T(s);
    }
  return c;
}

template <typename T>
Tensor<T> transposed(const Tensor<T>& a) {
  Tensor<T> t({a.dim(1), a.dim(0)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < a.dim(1); ++j) t.at(j, i) = a.at(i, j);
  return t;
}

Tensor<double> random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Tensor<double> t({r, c});
  for (auto& v : t.data()) v = rng.normal();
  return t;
}

}  // namespace

TEST_CASE("tensor construction checks data length") {
  CHECK_THROWS_AS(Tensor<float>({2, 3}, std::vector<float>(5)), ShapeError);
  Tensor<float> t({2, 3}, 1.5f);
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  CHECK(t[5] == 1.5f);
  CHECK(shape_string(t.shape()) == "[2 x 3]");
  CHECK_THROWS_AS(t.reshape({4, 2}), ShapeError);
  t.reshape({3, 2});
  CHECK(t.dim(0) == 3);
}

TEST_CASE("matmul small cases") {
  const Tensor<double> a({2, 2}, {1, 2, 3, 4});
  const Tensor<double> b({2, 1}, {0, 1});
  CHECK(matmul(a, b) == Tensor<double>({2, 1}, {2, 4}));

  const Tensor<double> id({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Tensor<double> m({3, 2}, {1, 2, 3, 4, 5, 6});
  CHECK(matmul(id, m) == m);
  CHECK(matmul(Tensor<double>({2, 3}), m) == Tensor<double>({2, 2}));
  CHECK_THROWS_AS(matmul(m, m), ShapeError);
}

TEST_CASE("matmul with transpose flags matches naive products") {
  Rng rng(3);
  for (int it = 0; it < 20; ++it) {
    const std::size_t m = 1 + rng.below(6), k = 1 + rng.below(6), n = 1 + rng.below(6);
    const auto a = random_matrix(m, k, rng), b = random_matrix(k, n, rng);
    const auto want = naive_matmul(a, b);
    for (const auto& got : {matmul(a, b), matmul(transposed(a), b, true, false), matmul(a, transposed(b), false, true),
                            matmul(transposed(a), transposed(b), true, true)}) {
      REQUIRE(got.shape() == want.shape());
      for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("elementwise ops and channel broadcast") {
  const Tensor<float> a({2}, {1, 2});
  const Tensor<float> b({2}, {3, 4});
  CHECK(elementwise(BinaryOp::add, a, b) == Tensor<float>({2}, {4, 6}));
  CHECK(elementwise(BinaryOp::sub, b, a) == Tensor<float>({2}, {2, 2}));
  CHECK(elementwise(BinaryOp::mul, a, Tensor<float>({2}, 1.0f)) == a);
  CHECK(elementwise(BinaryOp::add, a, Tensor<float>({2})) == a);

  Tensor<float> x({2, 2, 1, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  const auto y = elementwise(BinaryOp::add, x, Tensor<float>({2}, {10, 20}));
  CHECK(y == Tensor<float>({2, 2, 1, 2}, {11, 12, 23, 24, 15, 16, 27, 28}));
  CHECK_THROWS_AS(elementwise(BinaryOp::add, x, Tensor<float>({3})), ShapeError);
  CHECK_THROWS_AS(elementwise(BinaryOp::add, a, Tensor<float>({3})), ShapeError);
}

TEST_CASE("reductions") {
  const Tensor<double> m({2, 2}, {1, 2, 3, 4});
  const auto total = reduce(ReduceOp::sum, m);
  CHECK(total.rank() == 0);
  CHECK(total[0] == 10);
  CHECK(reduce(ReduceOp::mean, Tensor<double>({2}, {2, 4}))[0] == 3);
  CHECK(reduce(ReduceOp::max, Tensor<double>({2, 2}, {1, 5, 3, 4}), {1}) == Tensor<double>({2}, {5, 4}));
  CHECK(reduce(ReduceOp::sum, m, {0}) == Tensor<double>({2}, {4, 6}));
  CHECK_THROWS_AS(reduce(ReduceOp::sum, m, {2}), ShapeError);
  CHECK_THROWS_AS(reduce(ReduceOp::max, Tensor<double>({0, 2}), {0}), ShapeError);
}

TEST_CASE("scaled, dot, finiteness and casts") {
  const Tensor<float> a({3}, {1, 2, 3});
  CHECK(scaled(a, 2.0f) == Tensor<float>({3}, {2, 4, 6}));
  CHECK(dot(a, a) == 14.0f);
  CHECK(a.all_finite());
  Tensor<float> bad = a;
  bad[1] = std::numeric_limits<float>::quiet_NaN();
  CHECK_FALSE(bad.all_finite());
  CHECK(a.cast<double>().cast<float>() == a);
}
