#include "mdseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace mdseg {

namespace {
void check_binary(const Tensor<std::uint8_t>& m, const char* who) {
  for (std::size_t i = 0; i < m.size(); ++i)
    require(m[i] <= 1, std::string(who) + ": mask must be binary");
}

struct Pt {
  int y, x;
};

std::vector<Pt> boundary(const Tensor<std::uint8_t>& m) {
  const long H = long(m.dim(0)), W = long(m.dim(1));
  std::vector<Pt> out;
  auto inside = [&](long y, long x) {
    return y >= 0 && y < H && x >= 0 && x < W && m[std::size_t(y * W + x)] != 0;
  };
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x) {
      if (m[std::size_t(y * W + x)] == 0) continue;
      if (!inside(y - 1, x) || !inside(y + 1, x) || !inside(y, x - 1) ||
          !inside(y, x + 1))
        out.push_back({int(y), int(x)});
    }
  return out;
}

std::vector<double> nn_dists(const std::vector<Pt>& from, const std::vector<Pt>& to) {
  std::vector<double> d(from.size());
  for (std::size_t i = 0; i < from.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (const Pt& q : to) {
      const double dy = from[i].y - q.y, dx = from[i].x - q.x;
      best = std::min(best, dy * dy + dx * dx);
    }
    d[i] = std::sqrt(best);
  }
  return d;
}
}  // namespace

DiceJaccard dice_jaccard(const Tensor<std::uint8_t>& pred,
                         const Tensor<std::uint8_t>& gt) {
  require(pred.same_shape(gt), "dice_jaccard: shape mismatch");
  check_binary(pred, "dice_jaccard");
  check_binary(gt, "dice_jaccard");
  std::size_t p = 0, g = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    p += pred[i];
    g += gt[i];
    both += pred[i] & gt[i];
  }
  if (p == 0 && g == 0) return {100.0, 100.0};
  if (p == 0 || g == 0) return {0.0, 0.0};
  return {200.0 * double(both) / double(p + g),
          100.0 * double(both) / double(p + g - both)};
}

SurfaceDistances surface_distances(const Tensor<std::uint8_t>& pred,
                                   const Tensor<std::uint8_t>& gt) {
  require(pred.same_shape(gt) && pred.rank() == 2, "surface_distances: H x W masks");
  check_binary(pred, "surface_distances");
  check_binary(gt, "surface_distances");
  const auto bp = boundary(pred), bg = boundary(gt);
  if (bp.empty() || bg.empty()) return {};

  const auto d_pg = nn_dists(bp, bg), d_gp = nn_dists(bg, bp);
  SurfaceDistances s;
  s.defined = true;
  double hmax = 0, acc = 0;
  for (double v : d_pg) {
    hmax = std::max(hmax, v);
    acc += v;
  }
  for (double v : d_gp) {
    hmax = std::max(hmax, v);
    acc += v;
  }
  s.hd = hmax;
  s.asd = acc / double(d_pg.size() + d_gp.size());
  return s;
}

Silhouette silhouette(const Tensor<double>& features, const std::vector<int>& labels) {
  require(features.rank() == 2 && features.dim(0) == labels.size(),
          "silhouette: label count mismatch");
  const std::size_t n = features.dim(0), d = features.dim(1);

  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) groups[labels[i]].push_back(i);
  if (groups.size() < 2) return {};

  auto dist = [&](std::size_t i, std::size_t j) {
    double s = 0;
    for (std::size_t k = 0; k < d; ++k) {
      const double t = features[i * d + k] - features[j * d + k];
      s += t * t;
    }
    return std::sqrt(s);
  };

  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& own = groups[labels[i]];
    if (own.size() == 1) continue;  // singleton: s(i) = 0
    double a = 0;
    for (std::size_t j : own)
      if (j != i) a += dist(i, j);
    a /= double(own.size() - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [lab, members] : groups) {
      if (lab == labels[i]) continue;
      double m = 0;
      for (std::size_t j : members) m += dist(i, j);
      b = std::min(b, m / double(members.size()));
    }
    const double denom = std::max(a, b);
    if (denom > 0) total += (b - a) / denom;
  }
  return {true, total / double(n)};
}

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  require(a.size() == b.size() && !a.empty(), "ari: label size mismatch");
  const double n = double(a.size());
  std::map<std::pair<int, int>, double> cells;
  std::map<int, double> ra, rb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cells[{a[i], b[i]}] += 1;
    ra[a[i]] += 1;
    rb[b[i]] += 1;
  }
  auto c2 = [](double x) { return x * (x - 1) / 2; };
  double sum_cells = 0, sum_a = 0, sum_b = 0;
  for (const auto& [k, v] : cells) sum_cells += c2(v);
  for (const auto& [k, v] : ra) sum_a += c2(v);
  for (const auto& [k, v] : rb) sum_b += c2(v);
  const double expected = sum_a * sum_b / c2(n);
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;  // both partitions trivial
  return (sum_cells - expected) / (max_index - expected);
}

}  // namespace mdseg
