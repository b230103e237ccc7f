#include <doctest.h>

#include <algorithm>

#include "mdseg/cmmd.hpp"
#include "mdseg/grad_check.hpp"
#include "mdseg/rng.hpp"

using namespace mdseg;
using G = Graph<double>;

namespace {

Tensor<double> random_rows(std::size_t n, std::size_t d, std::uint64_t seed,
                           double lo = -2, double hi = 2) {
  Rng rng(seed);
  Tensor<double> t(Shape{n, d});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// independently coded double-loop estimator (no shared kernel helper)
double mmd2_oracle(const Tensor<double>& X, const Tensor<double>& Y, double sigma) {
  const std::size_t m = X.dim(0), n = Y.dim(0), d = X.dim(1);
  auto k = [&](const double* a, const double* b) {
    double s = 0;
    for (std::size_t t = 0; t < d; ++t) s += (a[t] - b[t]) * (a[t] - b[t]);
    return std::exp(-s / (2.0 * sigma * sigma));
  };
  double xx = 0, yy = 0, xy = 0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      if (i != j) xx += k(X.data() + i * d, X.data() + j * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) yy += k(Y.data() + i * d, Y.data() + j * d);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) xy += k(X.data() + i * d, Y.data() + j * d);
  return xx / (double(m) * double(m - 1)) + yy / (double(n) * double(n - 1)) -
         2.0 * xy / (double(m) * double(n));
}

double median_oracle(const Tensor<double>& p) {
  const std::size_t n = p.dim(0), d = p.dim(1);
  std::vector<double> ds;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < d; ++k)
        s += (p[i * d + k] - p[j * d + k]) * (p[i * d + k] - p[j * d + k]);
      ds.push_back(std::sqrt(s));
    }
  std::sort(ds.begin(), ds.end());
  return ds.size() % 2 ? ds[ds.size() / 2]
                       : 0.5 * (ds[ds.size() / 2 - 1] + ds[ds.size() / 2]);
}

}  // namespace

TEST_CASE("median heuristic: single pair, coincident floor, oracle match") {
  Tensor<double> two(Shape{2, 2}, std::vector<double>{0, 0, 2, 0});
  CHECK(median_heuristic_sigma(two) == 2.0);

  Tensor<double> same(Shape{4, 3}, 1.25);
  CHECK(median_heuristic_sigma(same) == 1e-6);

  for (std::size_t n : {3, 4, 5, 12}) {  // odd and even pair counts
    auto p = random_rows(n, 3, 40 + n);
    CHECK(median_heuristic_sigma(p) == median_oracle(p));
  }
}

TEST_CASE("mmd2: coincident sets cancel exactly") {
  Tensor<double> a(Shape{2, 3}, std::vector<double>{1, 2, 3, 1, 2, 3});
  CHECK(mmd2_unbiased_value(a, a, 1.0) == 0.0);
}

TEST_CASE("mmd2 closed form: {0,0} vs {1,1} at sigma 1") {
  Tensor<double> X(Shape{2, 1}, std::vector<double>{0, 0});
  Tensor<double> Y(Shape{2, 1}, std::vector<double>{1, 1});
  const double want = 2.0 - 2.0 * std::exp(-0.5);
  CHECK(mmd2_unbiased_value(X, Y, 1.0) == doctest::Approx(want).epsilon(1e-12));
  CHECK(want == doctest::Approx(0.786939).epsilon(1e-6));
}

TEST_CASE("mmd2 matches the double-loop oracle on random pairs") {
  Rng rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = std::size_t(rng.uniform_int(2, 50));
    const std::size_t n = std::size_t(rng.uniform_int(2, 50));
    const std::size_t d = std::size_t(rng.uniform_int(1, 8));
    auto X = random_rows(m, d, 1000 + std::uint64_t(trial));
    auto Y = random_rows(n, d, 2000 + std::uint64_t(trial));
    const double sigma = rng.uniform(0.3, 3.0);
    CHECK(mmd2_unbiased_value(X, Y, sigma) ==
          doctest::Approx(mmd2_oracle(X, Y, sigma)).epsilon(1e-10));
  }
}

TEST_CASE("mmd2 on identical sets is never positive, zero for repeats") {
  for (std::uint64_t seed : {3, 4, 5, 6, 7}) {
    auto X = random_rows(12, 4, seed);
    CHECK(mmd2_unbiased_value(X, X, 1.0) <= 1e-15);
  }
  Tensor<double> rep(Shape{5, 2}, 0.75);  // one point repeated five times
  CHECK(mmd2_unbiased_value(rep, rep, 2.0) == 0.0);
}

TEST_CASE("mmd2 value is symmetric in its arguments") {
  auto X = random_rows(9, 3, 11);
  auto Y = random_rows(14, 3, 12);
  CHECK(mmd2_unbiased_value(X, Y, 1.3) ==
        doctest::Approx(mmd2_unbiased_value(Y, X, 1.3)).epsilon(1e-12));
}

TEST_CASE("mmd2 contracts: set sizes and sigma") {
  auto X = random_rows(1, 2, 1);
  auto Y = random_rows(4, 2, 2);
  CHECK_THROWS_AS(mmd2_unbiased_value(X, Y, 1.0), ContractViolation);
  CHECK_THROWS_AS(mmd2_unbiased_value(Y, X, 1.0), ContractViolation);
  auto X2 = random_rows(4, 2, 3);
  CHECK_THROWS_AS(mmd2_unbiased_value(X2, Y, 0.0), ContractViolation);
}

TEST_CASE("precomputed anchor term reproduces the direct value") {
  auto X = random_rows(8, 4, 21);
  auto Y = random_rows(10, 4, 22);
  const double yy = mmd2_set_term(Y, 1.7);
  CHECK(mmd2_unbiased_value(X, Y, 1.7, yy) == mmd2_unbiased_value(X, Y, 1.7));
}

TEST_CASE("mmd2 gradient wrt X matches finite differences, X only") {
  auto X0 = random_rows(6, 3, 31);
  auto Y = random_rows(7, 3, 32);
  const double sigma = 1.1;
  const std::vector<double> point(X0.data(), X0.data() + X0.size());

  G g(true);
  auto x = g.leaf(X0, true);
  auto loss = mmd2_unbiased(g, x, Y, sigma);
  auto grads = g.backward(loss);
  REQUIRE(grads.size() == 1);  // nothing but X receives gradient
  const auto& an = grads.at(x.id);

  auto f = [&](const std::vector<double>& p) {
    return mmd2_unbiased_value(Tensor<double>(Shape{6, 3}, std::vector<double>(p)),
                               Y, sigma);
  };
  CHECK(grad_check(f, point, std::vector<double>(an.data(), an.data() + an.size()),
                   1e-6) < 1e-5);
}

TEST_CASE("pseudo-domain assignment: exact match, single centroid, ties") {
  std::vector<std::vector<double>> cents{{0, 0}, {4, 0}, {10, 10}};
  Tensor<double> f(Shape{3, 2}, std::vector<double>{10, 10, 2, 0, 0.1, 0});
  auto a = assign_pseudo_domain(f, cents);
  CHECK(a.labels == std::vector<int>{2, 0, 0});  // row 1 ties 0 vs 1 -> smallest
  CHECK(a.dists.at(0, 2) == 0.0);
  CHECK(a.dists.at(1, 0) == 2.0);
  CHECK(a.dists.at(1, 1) == 2.0);

  auto single = assign_pseudo_domain(f, {{1, 1}});
  CHECK(single.labels == std::vector<int>{0, 0, 0});
}

TEST_CASE("pseudo-domain assignment matches brute-force argmin") {
  auto f = random_rows(40, 5, 51);
  std::vector<std::vector<double>> cents;
  auto c = random_rows(6, 5, 52);
  for (std::size_t i = 0; i < 6; ++i)
    cents.emplace_back(c.data() + i * 5, c.data() + (i + 1) * 5);
  auto a = assign_pseudo_domain(f, cents);
  for (std::size_t i = 0; i < 40; ++i) {
    int best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t q = 0; q < 6; ++q) {
      double s = 0;
      for (std::size_t k = 0; k < 5; ++k)
        s += (f[i * 5 + k] - cents[q][k]) * (f[i * 5 + k] - cents[q][k]);
      if (std::sqrt(s) < bd) { bd = std::sqrt(s); best = int(q); }
    }
    CHECK(a.labels[i] == best);
    CHECK(a.dists.at(i, std::size_t(best)) == doctest::Approx(bd).epsilon(1e-12));
  }
}

TEST_CASE("pseudo-domain assignment rejects empty centroid lists") {
  auto f = random_rows(3, 2, 61);
  CHECK_THROWS_AS(assign_pseudo_domain(f, {}), ContractViolation);
}

TEST_CASE("mmd_loss: coincident features and anchor give zero") {
  Tensor<double> anchor(Shape{3, 2}, std::vector<double>{1, 2, 1, 2, 1, 2});
  Tensor<double> feats(Shape{4, 2}, std::vector<double>{1, 2, 1, 2, 1, 2, 1, 2});
  DomainAssignment a;
  a.labels = {0, 0, 0, 0};
  G g(false);
  auto r = mmd_loss(g, g.constant(feats), a, 1, anchor, 1.0);
  REQUIRE(r.active);
  CHECK(r.eligible == 1);
  CHECK(r.skipped == 0);
  CHECK(g.value(r.loss)[0] == 0.0);
}

TEST_CASE("mmd_loss: single cluster equals plain mmd2, pairs average") {
  auto feats = random_rows(10, 3, 71);
  auto anchor = random_rows(6, 3, 72);
  const double sigma = 0.9;

  DomainAssignment one;
  one.labels.assign(10, 0);
  G g(false);
  auto r1 = mmd_loss(g, g.constant(feats), one, 1, anchor, sigma);
  REQUIRE(r1.active);
  CHECK(g.value(r1.loss)[0] ==
        doctest::Approx(mmd2_unbiased_value(feats, anchor, sigma)).epsilon(1e-12));

  DomainAssignment two;
  two.labels = {0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
  auto r2 = mmd_loss(g, g.constant(feats), two, 2, anchor, sigma);
  REQUIRE(r2.active);
  CHECK(r2.eligible == 2);
  REQUIRE(r2.per_cluster.size() == 2);
  CHECK(g.value(r2.loss)[0] ==
        doctest::Approx(0.5 * (r2.per_cluster[0] + r2.per_cluster[1]))
            .epsilon(1e-12));
}

TEST_CASE("mmd_loss: undersized clusters are skipped, all-skipped is inactive") {
  auto feats = random_rows(5, 2, 81);
  auto anchor = random_rows(4, 2, 82);
  DomainAssignment a;
  a.labels = {0, 0, 1, 2, 2};  // cluster 1 has one member
  G g(false);
  auto r = mmd_loss(g, g.constant(feats), a, 3, anchor, 1.0);
  CHECK(r.active);
  CHECK(r.eligible == 2);
  CHECK(r.skipped == 1);

  DomainAssignment lone;
  lone.labels = {0, 1, 2, 3, 4};
  auto r2 = mmd_loss(g, g.constant(feats), lone, 5, anchor, 1.0);
  CHECK_FALSE(r2.active);
  CHECK(r2.skipped == 5);
}

TEST_CASE("mmd_loss backpropagates into the student features") {
  auto feats = random_rows(6, 2, 91);
  auto anchor = random_rows(5, 2, 92);
  DomainAssignment a;
  a.labels = {0, 0, 0, 1, 1, 1};
  G g(true);
  auto x = g.leaf(feats, true);
  auto r = mmd_loss(g, x, a, 2, anchor, 1.2);
  REQUIRE(r.active);
  auto grads = g.backward(r.loss);
  REQUIRE(grads.count(x.id) == 1);
  double norm = 0;
  for (std::size_t i = 0; i < grads.at(x.id).size(); ++i)
    norm += std::abs(grads.at(x.id)[i]);
  CHECK(norm > 0);
}

TEST_CASE("domain loss averages active layers over the full layer count") {
  G g(false);
  std::vector<MmdLossResult<double>> layers(5);
  for (int i = 0; i < 5; ++i) {
    layers[std::size_t(i)].active = true;
    layers[std::size_t(i)].loss = g.constant_scalar(double(i + 1));
  }
  CHECK(g.value(domain_loss(g, layers, 5))[0] == doctest::Approx(3.0));

  std::vector<MmdLossResult<double>> sparse(5);
  sparse[2].active = true;
  sparse[2].loss = g.constant_scalar(2.5);
  CHECK(g.value(domain_loss(g, sparse, 5))[0] == doctest::Approx(0.5));

  std::vector<MmdLossResult<double>> none(5);
  CHECK(g.value(domain_loss(g, none, 5))[0] == 0.0);
}

TEST_CASE("standardizer: population moments and graph parity") {
  Tensor<double> simple(Shape{2, 1}, std::vector<double>{0, 2});
  auto s0 = fit_standardizer(simple);
  CHECK(s0.mean[0] == 1.0);
  CHECK(s0.inv_std[0] == 1.0);  // population std of {0,2} is 1

  auto p = random_rows(50, 4, 101);
  auto s = fit_standardizer(p);
  auto z = apply_standardizer(s, p);
  for (std::size_t k = 0; k < 4; ++k) {
    double mean = 0, var = 0;
    for (std::size_t i = 0; i < 50; ++i) mean += z[i * 4 + k];
    mean /= 50;
    for (std::size_t i = 0; i < 50; ++i)
      var += (z[i * 4 + k] - mean) * (z[i * 4 + k] - mean);
    var /= 50;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-10));
  }

  G g(true);
  auto x = g.leaf(p, true);
  auto zg = g.value(standardize_rows(g, x, s));
  for (std::size_t i = 0; i < z.size(); ++i)
    CHECK(zg[i] == doctest::Approx(z[i]).epsilon(1e-12));
}

TEST_CASE("constant dimensions hit the standardizer variance floor") {
  Tensor<double> p(Shape{5, 2});
  for (std::size_t i = 0; i < 5; ++i) {
    p.at(i, std::size_t(0)) = 3.0;              // constant dim
    p.at(i, std::size_t(1)) = double(i);
  }
  auto s = fit_standardizer(p);
  CHECK(s.inv_std[0] == doctest::Approx(1e8));
  auto z = apply_standardizer(s, p);
  for (std::size_t i = 0; i < 5; ++i) CHECK(z[i * 2] == 0.0);
}
