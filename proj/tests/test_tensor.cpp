#include <doctest.h>

#include "mdseg/rng.hpp"
#include "mdseg/tensor.hpp"

using namespace mdseg;

TEST_CASE("shape numel and printing") {
  CHECK(shape_numel({}) == 1);
  CHECK(shape_numel({4}) == 4);
  CHECK(shape_numel({2, 3, 4}) == 24);
  CHECK(shape_numel({5, 0}) == 0);
  CHECK(shape_str({2, 3}) == "(2,3)");
  CHECK(shape_str({}) == "()");
}

TEST_CASE("tensor construction and accessors") {
  Tensor<float> t(Shape{2, 3}, 1.5f);
  CHECK(t.rank() == 2);
  CHECK(t.size() == 6);
  CHECK(t.dim(1) == 3);
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(t[i] == 1.5f);

  t.at(1, std::size_t(2)) = 9.f;
  CHECK(t[5] == 9.f);

  Tensor<float> nchw(Shape{2, 3, 4, 5});
  nchw.at(1, 2, 3, 4) = 7.f;
  CHECK(nchw[((1 * 3 + 2) * 4 + 3) * 5 + 4] == 7.f);
  CHECK(nchw.n() == 2);
  CHECK(nchw.c() == 3);
  CHECK(nchw.h() == 4);
  CHECK(nchw.w() == 5);
}

TEST_CASE("tensor data-shape mismatch throws") {
  CHECK_THROWS_AS(Tensor<float>(Shape{2, 2}, std::vector<float>{1, 2, 3}),
                  ContractViolation);
}

TEST_CASE("scalar tensor") {
  auto s = Tensor<double>::scalar(3.25);
  CHECK(s.is_scalar());
  CHECK(s.rank() == 0);
  CHECK(s[0] == 3.25);
}

TEST_CASE("all_finite flags NaN and Inf") {
  Tensor<float> t(Shape{3}, 1.f);
  CHECK(t.all_finite());
  t[1] = std::numeric_limits<float>::quiet_NaN();
  CHECK(!t.all_finite());
  t[1] = 1.f;
  t[2] = std::numeric_limits<float>::infinity();
  CHECK(!t.all_finite());
}

TEST_CASE("cast between float and double") {
  Tensor<float> t(Shape{2}, std::vector<float>{1.5f, -2.f});
  auto d = t.cast<double>();
  CHECK(d[0] == 1.5);
  CHECK(d[1] == -2.0);
  auto back = d.cast<float>();
  CHECK(back == t);
}

TEST_CASE("equality is shape and contents") {
  Tensor<float> a(Shape{2, 2}, std::vector<float>{1, 2, 3, 4});
  Tensor<float> b(Shape{2, 2}, std::vector<float>{1, 2, 3, 4});
  Tensor<float> c(Shape{4}, std::vector<float>{1, 2, 3, 4});
  CHECK(a == b);
  CHECK(!(a == c));
}

TEST_CASE("keyed rng streams are independent and deterministic") {
  Rng a = Rng::keyed(7, {1, 2, 3});
  Rng b = Rng::keyed(7, {1, 2, 3});
  Rng c = Rng::keyed(7, {1, 2, 4});
  const double va = a.next_unit();
  CHECK(va == b.next_unit());
  CHECK(va != c.next_unit());
}

TEST_CASE("uniform_int covers inclusive range") {
  Rng r(99);
  bool lo = false, hi = false;
  for (int i = 0; i < 1000; ++i) {
    const auto v = r.uniform_int(2, 5);
    CHECK(v >= 2);
    CHECK(v <= 5);
    lo |= v == 2;
    hi |= v == 5;
  }
  CHECK(lo);
  CHECK(hi);
}

TEST_CASE("normal has sane moments") {
  Rng r(5);
  double s = 0, s2 = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double v = r.normal();
    s += v;
    s2 += v * v;
  }
  CHECK(std::abs(s / n) < 0.03);
  CHECK(std::abs(s2 / n - 1.0) < 0.05);
}
