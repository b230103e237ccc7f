#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "mdseg/graph.hpp"
#include "mdseg/hdbscan.hpp"

namespace mdseg {

struct KernelConfig {
  double sigma = 1.0;  // Gaussian bandwidth; pick via median_heuristic_sigma
};

/// Median of pairwise Euclidean distances, floored. Even pair counts take the
/// average of the two central order statistics.
inline double median_heuristic_sigma(const Tensor<double>& points,
                                     double floor_at = 1e-6) {
  require(points.rank() == 2 && points.dim(0) >= 2,
          "median_heuristic_sigma: need >= 2 points");
  const std::size_t n = points.dim(0), d = points.dim(1);
  std::vector<double> dists;
  dists.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < d; ++k) {
        const double t = points[i * d + k] - points[j * d + k];
        s += t * t;
      }
      dists.push_back(std::sqrt(s));
    }
  std::sort(dists.begin(), dists.end());
  const std::size_t m = dists.size();
  const double med =
      (m % 2 == 1) ? dists[m / 2] : 0.5 * (dists[m / 2 - 1] + dists[m / 2]);
  return std::max(med, floor_at);
}

namespace detail {
template <typename T>
double gauss_kernel(const T* a, const T* b, std::size_t d, double inv_two_sigma2) {
  double s = 0;
  for (std::size_t k = 0; k < d; ++k) {
    const double t = double(a[k]) - double(b[k]);
    s += t * t;
  }
  return std::exp(-s * inv_two_sigma2);
}
}  // namespace detail

/// Off-diagonal kernel mean sum_{i != j} k(y_i, y_j) / (n(n-1)); this is the
/// YY term of the unbiased estimator, precomputable for a fixed anchor.
template <typename T>
double mmd2_set_term(const Tensor<T>& Y, double sigma) {
  require(Y.rank() == 2 && Y.dim(0) >= 2, "mmd2_set_term: need n >= 2");
  require(sigma > 0 && std::isfinite(sigma), "mmd2_set_term: sigma must be positive");
  const std::size_t n = Y.dim(0), d = Y.dim(1);
  const double c = 1.0 / (2.0 * sigma * sigma);
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      acc += detail::gauss_kernel(Y.data() + i * d, Y.data() + j * d, d, c);
  return 2.0 * acc / (double(n) * double(n - 1));
}

/// Three-term unbiased estimator of MMD^2 with Gaussian kernel
/// exp(-||a-b||^2 / (2 sigma^2)); may be negative.
template <typename T>
double mmd2_unbiased_value(const Tensor<T>& X, const Tensor<T>& Y, double sigma,
                           std::optional<double> precomputed_yy = {}) {
  require(X.rank() == 2 && Y.rank() == 2 && X.dim(1) == Y.dim(1),
          "mmd2_unbiased: m x d and n x d expected");
  const std::size_t m = X.dim(0), n = Y.dim(0), d = X.dim(1);
  require(m >= 2 && n >= 2, "mmd2_unbiased: need m >= 2 and n >= 2");
  require(sigma > 0 && std::isfinite(sigma), "mmd2_unbiased: sigma must be positive");
  const double c = 1.0 / (2.0 * sigma * sigma);
  const double xx = mmd2_set_term(X, sigma);
  const double yy = precomputed_yy ? *precomputed_yy : mmd2_set_term(Y, sigma);
  double cross = 0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      cross += detail::gauss_kernel(X.data() + i * d, Y.data() + j * d, d, c);
  return xx + yy - 2.0 * cross / (double(m) * double(n));
}

/// Differentiable MMD^2 node: gradient flows into X only (Y is the detached
/// anchor). Hand-derived backward:
///   d/dx_i = (2/(m(m-1))) sum_{j!=i} k_ij (x_j - x_i)/sigma^2
///          - (2/(mn))     sum_j    k(x_i,y_j) (y_j - x_i)/sigma^2.
template <typename T>
typename Graph<T>::Value mmd2_unbiased(Graph<T>& g, typename Graph<T>::Value X,
                                       const Tensor<T>& Y, double sigma,
                                       std::optional<double> precomputed_yy = {}) {
  const Tensor<T> Xv = g.value(X);  // copy for the backward closure
  const double val = mmd2_unbiased_value(Xv, Y, sigma, precomputed_yy);
  const std::size_t xid = X.id;
  const std::size_t m = Xv.dim(0), n = Y.dim(0), d = Xv.dim(1);
  const double inv_sigma2 = 1.0 / (sigma * sigma);
  const double c = 0.5 * inv_sigma2;
  return g.custom(
      Tensor<T>::scalar(T(val)),
      [xid, Xv, Y, m, n, d, inv_sigma2, c](Graph<T>& gg, const Tensor<T>& go) {
        Tensor<T>& gx = gg.adjoint(xid);
        const double a_xx = 2.0 / (double(m) * double(m - 1));
        const double a_xy = 2.0 / (double(m) * double(n));
        std::vector<double> row(d);
        for (std::size_t i = 0; i < m; ++i) {
          std::fill(row.begin(), row.end(), 0.0);
          for (std::size_t j = 0; j < m; ++j) {
            if (j == i) continue;
            const double k =
                detail::gauss_kernel(Xv.data() + i * d, Xv.data() + j * d, d, c);
            for (std::size_t t = 0; t < d; ++t)
              row[t] += a_xx * k * inv_sigma2 *
                        (double(Xv[j * d + t]) - double(Xv[i * d + t]));
          }
          for (std::size_t j = 0; j < n; ++j) {
            const double k =
                detail::gauss_kernel(Xv.data() + i * d, Y.data() + j * d, d, c);
            for (std::size_t t = 0; t < d; ++t)
              row[t] -= a_xy * k * inv_sigma2 *
                        (double(Y[j * d + t]) - double(Xv[i * d + t]));
          }
          for (std::size_t t = 0; t < d; ++t)
            gx[i * d + t] += T(row[t] * double(go[0]));
        }
      });
}

// ----------------------------------------------------------------------
// pseudo-domain assignment
// ----------------------------------------------------------------------

struct DomainAssignment {
  std::vector<int> labels;  // nearest-centroid index, 0-based
  Tensor<double> dists;     // m x q Euclidean distances
};

/// Nearest centroid under Euclidean distance; ties take the smallest index.
inline DomainAssignment assign_pseudo_domain(
    const Tensor<double>& features,
    const std::vector<std::vector<double>>& centroids) {
  require(!centroids.empty(), "assign_pseudo_domain: no centroids (Q = 0)");
  require(features.rank() == 2 && features.dim(1) == centroids[0].size(),
          "assign_pseudo_domain: feature dim mismatch");
  const std::size_t m = features.dim(0), d = features.dim(1), q = centroids.size();
  DomainAssignment a;
  a.labels.resize(m);
  a.dists = Tensor<double>(Shape{m, q});
  for (std::size_t i = 0; i < m; ++i) {
    int best = 0;
    for (std::size_t cdx = 0; cdx < q; ++cdx) {
      double s = 0;
      for (std::size_t k = 0; k < d; ++k) {
        const double t = features[i * d + k] - centroids[cdx][k];
        s += t * t;
      }
      a.dists.at(i, cdx) = std::sqrt(s);
      if (a.dists.at(i, cdx) < a.dists.at(i, std::size_t(best))) best = int(cdx);
    }
    a.labels[i] = best;
  }
  return a;
}

// ----------------------------------------------------------------------
// per-layer loss and layer mean
// ----------------------------------------------------------------------

template <typename T>
struct MmdLossResult {
  bool active = false;              // at least one cluster had >= 2 members
  typename Graph<T>::Value loss{};  // valid only when active
  int eligible = 0;
  int skipped = 0;                  // clusters with < 2 assigned members
  std::vector<double> per_cluster;  // MMD^2 per eligible cluster, in order
};

/// Mean MMD^2 over clusters with >= 2 assigned members, against the anchor.
template <typename T>
MmdLossResult<T> mmd_loss(Graph<T>& g, typename Graph<T>::Value features,
                          const DomainAssignment& assign, int q,
                          const Tensor<T>& anchor, double sigma,
                          std::optional<double> precomputed_yy = {}) {
  require(q >= 1, "mmd_loss: need Q >= 1");
  require(anchor.rank() == 2 && anchor.dim(0) >= 2, "mmd_loss: anchor needs n >= 2");
  require(g.value(features).dim(0) == assign.labels.size(),
          "mmd_loss: assignment size mismatch");
  MmdLossResult<T> r;
  std::vector<typename Graph<T>::Value> terms;
  for (int cdx = 0; cdx < q; ++cdx) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < assign.labels.size(); ++i)
      if (assign.labels[i] == cdx) rows.push_back(i);
    if (rows.size() < 2) {
      ++r.skipped;
      continue;
    }
    auto grp = g.gather_rows(features, rows);
    auto m2 = mmd2_unbiased(g, grp, anchor, sigma, precomputed_yy);
    r.per_cluster.push_back(double(g.value(m2)[0]));
    terms.push_back(m2);
    ++r.eligible;
  }
  if (terms.empty()) return r;  // inactive marker
  r.active = true;
  r.loss = g.weighted_sum(terms,
                          std::vector<double>(terms.size(), 1.0 / double(terms.size())));
  return r;
}

/// (1/L) sum_l per-layer loss; inactive layers contribute 0.
template <typename T>
typename Graph<T>::Value domain_loss(
    Graph<T>& g, const std::vector<MmdLossResult<T>>& layers, std::size_t L) {
  require(L >= 1 && layers.size() <= L, "domain_loss: bad layer count");
  std::vector<typename Graph<T>::Value> terms;
  for (const auto& l : layers)
    if (l.active) terms.push_back(l.loss);
  if (terms.empty()) return g.constant_scalar(T(0));
  return g.weighted_sum(terms, std::vector<double>(terms.size(), 1.0 / double(L)));
}

// ----------------------------------------------------------------------
// per-dimension standardization (fit on the clustered bank, reused for
// anchor and per-step student features so all CMMD math shares one space)
// ----------------------------------------------------------------------

struct Standardizer {
  std::vector<double> mean, inv_std;
};

inline Standardizer fit_standardizer(const Tensor<double>& pts) {
  require(pts.rank() == 2 && pts.dim(0) >= 1, "fit_standardizer: empty input");
  const std::size_t n = pts.dim(0), d = pts.dim(1);
  Standardizer s;
  s.mean.assign(d, 0.0);
  s.inv_std.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) s.mean[k] += pts[i * d + k];
  for (std::size_t k = 0; k < d; ++k) s.mean[k] /= double(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) {
      const double t = pts[i * d + k] - s.mean[k];
      s.inv_std[k] += t * t;
    }
  for (std::size_t k = 0; k < d; ++k)
    s.inv_std[k] = 1.0 / std::max(std::sqrt(s.inv_std[k] / double(n)), 1e-8);
  return s;
}

inline Tensor<double> apply_standardizer(const Standardizer& s,
                                         const Tensor<double>& pts) {
  require(pts.rank() == 2 && pts.dim(1) == s.mean.size(),
          "apply_standardizer: dim mismatch");
  Tensor<double> out(pts.shape());
  const std::size_t n = pts.dim(0), d = pts.dim(1);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k)
      out[i * d + k] = (pts[i * d + k] - s.mean[k]) * s.inv_std[k];
  return out;
}

/// In-graph (x - mean) * inv_std with row-tiled constants.
template <typename T>
typename Graph<T>::Value standardize_rows(Graph<T>& g, typename Graph<T>::Value x,
                                          const Standardizer& s) {
  const Tensor<T>& xv = g.value(x);
  require(xv.rank() == 2 && xv.dim(1) == s.mean.size(),
          "standardize_rows: dim mismatch");
  const std::size_t n = xv.dim(0), d = xv.dim(1);
  Tensor<T> mu(xv.shape()), is(xv.shape());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) {
      mu[i * d + k] = T(s.mean[k]);
      is[i * d + k] = T(s.inv_std[k]);
    }
  return g.mul(g.sub(x, g.constant(std::move(mu))), g.constant(std::move(is)));
}

}  // namespace mdseg
