#include "mdseg/hdbscan.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace mdseg {

namespace {
constexpr double kLambdaCap = 1e12;

double lambda_of(double height) {
  if (height <= 0) return kLambdaCap;
  return std::min(1.0 / height, kLambdaCap);
}

double sqdist(const Tensor<double>& p, std::size_t i, std::size_t j) {
  const std::size_t d = p.dim(1);
  const double* a = p.data() + i * d;
  const double* b = p.data() + j * d;
  double s = 0;
  for (std::size_t k = 0; k < d; ++k) {
    const double t = a[k] - b[k];
    s += t * t;
  }
  return s;
}
}  // namespace

std::vector<double> core_distances(const Tensor<double>& points, int min_samples) {
  require(points.rank() == 2, "core_distances: n x d points expected");
  const std::size_t n = points.dim(0);
  require(min_samples >= 1, "core_distances: min_samples must be >= 1");
  require(n > std::size_t(min_samples), "core_distances: need n > min_samples");
  std::vector<double> core(n);
  std::vector<double> row(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t m = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) row[m++] = sqdist(points, i, j);
    std::nth_element(row.begin(), row.begin() + (min_samples - 1), row.end());
    core[i] = std::sqrt(row[std::size_t(min_samples - 1)]);
  }
  return core;
}

Tensor<double> mutual_reachability(const Tensor<double>& points,
                                   const std::vector<double>& core) {
  require(points.rank() == 2 && points.dim(0) == core.size(),
          "mutual_reachability: core size mismatch");
  const std::size_t n = points.dim(0);
  Tensor<double> m(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = std::sqrt(sqdist(points, i, j));
      const double v = std::max({core[i], core[j], d});
      m.at(i, j) = v;
      m.at(j, i) = v;
    }
  return m;
}

std::vector<Merge> mst_single_linkage(const Tensor<double>& mreach) {
  require(mreach.rank() == 2 && mreach.dim(0) == mreach.dim(1),
          "mst_single_linkage: square matrix expected");
  const std::size_t n = mreach.dim(0);
  require(n >= 2, "mst_single_linkage: need at least 2 points");
  for (std::size_t i = 0; i < mreach.size(); ++i)
    require(std::isfinite(mreach[i]), "mst_single_linkage: non-finite distance");

  // Prim
  struct Edge {
    std::size_t u, v;
    double w;
  };
  std::vector<Edge> edges;
  edges.reserve(n - 1);
  std::vector<bool> in_tree(n, false);
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> from(n, 0);
  in_tree[0] = true;
  for (std::size_t j = 1; j < n; ++j) best[j] = mreach.at(0, j);
  for (std::size_t it = 1; it < n; ++it) {
    std::size_t pick = n;
    for (std::size_t j = 0; j < n; ++j)
      if (!in_tree[j] && (pick == n || best[j] < best[pick])) pick = j;
    in_tree[pick] = true;
    edges.push_back({from[pick], pick, best[pick]});
    for (std::size_t j = 0; j < n; ++j)
      if (!in_tree[j] && mreach.at(pick, j) < best[j]) {
        best[j] = mreach.at(pick, j);
        from[j] = pick;
      }
  }

  std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
    if (a.w != b.w) return a.w < b.w;
    const auto ka = std::minmax(a.u, a.v), kb = std::minmax(b.u, b.v);
    return ka < kb;
  });

  // union-find over cluster ids
  std::vector<std::size_t> parent(2 * n - 1);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };

  std::vector<Merge> merges;
  merges.reserve(n - 1);
  std::vector<std::size_t> cluster_of(2 * n - 1);  // dsu root -> cluster id
  std::iota(cluster_of.begin(), cluster_of.end(), 0);
  for (std::size_t k = 0; k < edges.size(); ++k) {
    const std::size_t ru = find(edges[k].u), rv = find(edges[k].v);
    std::size_t ca = cluster_of[ru], cb = cluster_of[rv];
    if (ca > cb) std::swap(ca, cb);
    parent[ru] = rv;
    cluster_of[find(rv)] = n + k;
    merges.push_back({ca, cb, edges[k].w});
  }
  return merges;
}

ClusterSet condense_and_extract(const std::vector<Merge>& merges, std::size_t n,
                                int min_cluster_size) {
  require(n >= 2 && merges.size() == n - 1, "condense: malformed dendrogram");
  require(min_cluster_size >= 2, "condense: min_cluster_size must be >= 2");
  const std::size_t mcs = std::size_t(min_cluster_size);
  const std::size_t total = 2 * n - 1;

  std::vector<std::size_t> child_a(total, 0), child_b(total, 0), size(total, 1);
  for (std::size_t k = 0; k < merges.size(); ++k) {
    const std::size_t id = n + k;
    child_a[id] = merges[k].a;
    child_b[id] = merges[k].b;
    require(merges[k].a < id && merges[k].b < id, "condense: bad merge ids");
    size[id] = size[merges[k].a] + size[merges[k].b];
  }

  auto leaves_under = [&](std::size_t node, std::vector<std::size_t>& out) {
    out.clear();
    std::vector<std::size_t> stack{node};
    while (!stack.empty()) {
      const std::size_t d = stack.back();
      stack.pop_back();
      if (d < n) {
        out.push_back(d);
      } else {
        stack.push_back(child_a[d]);
        stack.push_back(child_b[d]);
      }
    }
  };

  // condensed clusters
  struct Cond {
    int parent = -1;
    double lambda_birth = 0;
    double stability = 0;
    std::vector<int> children;
  };
  std::vector<Cond> cond(1);  // 0 = root, birth lambda 0
  std::vector<double> dept_lambda(n, 0);
  std::vector<int> dept_cluster(n, 0);

  std::vector<std::size_t> scratch;
  auto drop_points = [&](std::size_t dnode, int c, double lam) {
    leaves_under(dnode, scratch);
    cond[std::size_t(c)].stability +=
        double(scratch.size()) * (lam - cond[std::size_t(c)].lambda_birth);
    for (std::size_t p : scratch) {
      dept_lambda[p] = lam;
      dept_cluster[p] = c;
    }
  };

  struct Item {
    std::size_t dnode;
    int c;
  };
  std::vector<Item> stack{{total - 1, 0}};
  while (!stack.empty()) {
    const Item it = stack.back();
    stack.pop_back();
    if (it.dnode < n || size[it.dnode] < 2) {  // lone surviving point
      drop_points(it.dnode, it.c, kLambdaCap);
      continue;
    }
    const std::size_t a = child_a[it.dnode], b = child_b[it.dnode];
    const double lam = lambda_of(merges[it.dnode - n].height);
    const bool big_a = size[a] >= mcs, big_b = size[b] >= mcs;
    if (big_a && big_b) {
      // true split: current cluster dies, two new clusters are born
      cond[std::size_t(it.c)].stability +=
          double(size[it.dnode]) * (lam - cond[std::size_t(it.c)].lambda_birth);
      for (std::size_t ch : {a, b}) {
        cond.push_back(Cond{it.c, lam, 0, {}});
        const int cid = int(cond.size()) - 1;
        cond[std::size_t(it.c)].children.push_back(cid);
        stack.push_back({ch, cid});
      }
    } else if (big_a || big_b) {
      drop_points(big_a ? b : a, it.c, lam);
      stack.push_back({big_a ? a : b, it.c});
    } else {
      drop_points(it.dnode, it.c, lam);
    }
  }

  // excess-of-mass selection, root excluded; children have larger ids
  const std::size_t nc = cond.size();
  std::vector<double> score(nc, 0);
  std::vector<bool> selected(nc, false);
  for (std::size_t c = nc; c-- > 1;) {
    if (cond[c].children.empty()) {
      score[c] = cond[c].stability;
      selected[c] = true;
    } else {
      double child_sum = 0;
      for (int ch : cond[c].children) child_sum += score[std::size_t(ch)];
      if (cond[c].stability >= child_sum) {
        score[c] = cond[c].stability;
        selected[c] = true;
        // deselect the subtree
        std::vector<int> sub(cond[c].children);
        while (!sub.empty()) {
          const int s = sub.back();
          sub.pop_back();
          selected[std::size_t(s)] = false;
          for (int ch : cond[std::size_t(s)].children) sub.push_back(ch);
        }
      } else {
        score[c] = child_sum;
      }
    }
  }

  ClusterSet out;
  out.labels.assign(n, -1);

  // map each point to its closest selected ancestor (if any)
  std::vector<int> sel_of(nc, -1);  // condensed cluster -> selected ancestor id
  for (std::size_t c = 1; c < nc; ++c) {
    if (selected[c])
      sel_of[c] = int(c);
    else if (cond[c].parent > 0)
      sel_of[c] = sel_of[std::size_t(cond[c].parent)];
  }
  bool any = false;
  for (std::size_t p = 0; p < n; ++p) {
    const int c = dept_cluster[p];
    const int s = c > 0 ? sel_of[std::size_t(c)] : -1;
    if (s >= 0) {
      out.labels[p] = s;  // remapped below
      any = true;
    }
  }

  if (!any) {
    // coincident-mass fallback: one cluster from lambda-cap departures
    std::size_t cap_count = 0;
    for (std::size_t p = 0; p < n; ++p)
      if (dept_lambda[p] >= kLambdaCap) ++cap_count;
    if (cap_count >= mcs) {
      for (std::size_t p = 0; p < n; ++p)
        if (dept_lambda[p] >= kLambdaCap) out.labels[p] = 0;
      out.q = 1;
      out.stability.assign(1, cond[0].stability);
      out.noise_count = int(n - cap_count);
      return out;
    }
    out.q = 0;
    out.noise_count = int(n);
    return out;
  }

  // relabel clusters 0..q-1 in order of smallest member point index
  std::vector<int> order;  // selected condensed ids in first-member order
  std::vector<int> remap(nc, -1);
  for (std::size_t p = 0; p < n; ++p) {
    const int s = out.labels[p];
    if (s >= 0 && remap[std::size_t(s)] < 0) {
      remap[std::size_t(s)] = int(order.size());
      order.push_back(s);
    }
  }
  out.q = int(order.size());
  out.stability.resize(order.size());
  for (std::size_t i = 0; i < order.size(); ++i)
    out.stability[i] = cond[std::size_t(order[i])].stability;
  out.noise_count = 0;
  for (std::size_t p = 0; p < n; ++p) {
    if (out.labels[p] >= 0)
      out.labels[p] = remap[std::size_t(out.labels[p])];
    else
      ++out.noise_count;
  }
  return out;
}

ClusterSet hdbscan(const Tensor<double>& points, const HdbscanConfig& config) {
  validate(config);
  require(points.rank() == 2, "hdbscan: n x d points expected");
  const std::size_t n = points.dim(0), d = points.dim(1);
  require(n > std::size_t(config.min_samples), "hdbscan: need n > min_samples");

  const auto core = core_distances(points, config.min_samples);
  const auto mreach = mutual_reachability(points, core);
  const auto merges = mst_single_linkage(mreach);
  ClusterSet cs = condense_and_extract(merges, n, config.min_cluster_size);

  cs.centroids.assign(std::size_t(cs.q), std::vector<double>(d, 0.0));
  std::vector<std::size_t> counts(std::size_t(cs.q), 0);
  for (std::size_t p = 0; p < n; ++p) {
    const int l = cs.labels[p];
    if (l < 0) continue;
    ++counts[std::size_t(l)];
    for (std::size_t k = 0; k < d; ++k)
      cs.centroids[std::size_t(l)][k] += points[p * d + k];
  }
  for (int l = 0; l < cs.q; ++l) {
    require(counts[std::size_t(l)] >= std::size_t(config.min_cluster_size),
            "hdbscan: selected cluster below min_cluster_size");
    for (std::size_t k = 0; k < d; ++k)
      cs.centroids[std::size_t(l)][k] /= double(counts[std::size_t(l)]);
  }
  return cs;
}

}  // namespace mdseg
