#pragma once

#include <vector>

#include "mdseg/tensor.hpp"

namespace mdseg {

struct HdbscanConfig {
  int min_cluster_size = 10;
  int min_samples = 5;
};

inline void validate(const HdbscanConfig& c) {
  require(c.min_cluster_size >= 2, "hdbscan: min_cluster_size must be >= 2");
  require(c.min_samples >= 1, "hdbscan: min_samples must be >= 1");
}

struct ClusterSet {
  std::vector<int> labels;                     // per point; -1 = noise
  std::vector<std::vector<double>> centroids;  // exact member means, q x d
  std::vector<double> stability;               // excess-of-mass score per cluster
  int q = 0;
  int noise_count = 0;
};

/// Single-linkage merge over mutual-reachability distances. Cluster ids:
/// leaves 0..n-1, the k-th merge creates id n+k.
struct Merge {
  std::size_t a = 0, b = 0;  // a < b
  double height = 0;
};

/// Distance to the min_samples-th nearest neighbor, self excluded.
std::vector<double> core_distances(const Tensor<double>& points, int min_samples);

/// d_mreach(i,j) = max(core_i, core_j, ||p_i - p_j||); symmetric, zero diagonal.
Tensor<double> mutual_reachability(const Tensor<double>& points,
                                   const std::vector<double>& core);

/// Prim O(n^2) MST, then merges in ascending height; height ties broken by
/// the smaller (min index, max index) edge pair.
std::vector<Merge> mst_single_linkage(const Tensor<double>& mreach);

/// Condensed tree (splits smaller than min_cluster_size become point
/// fall-outs) plus excess-of-mass cluster selection with lambda = 1/height,
/// capped at 1e12 for zero heights. The root is never selectable; if nothing
/// is selected, points departing at the lambda cap (coincident-point mass)
/// form one cluster when at least min_cluster_size of them exist.
/// Centroids are left empty (no point coordinates here); hdbscan() fills them.
ClusterSet condense_and_extract(const std::vector<Merge>& merges, std::size_t n,
                                int min_cluster_size);

/// Full pipeline; requires n > min_samples.
ClusterSet hdbscan(const Tensor<double>& points, const HdbscanConfig& config);

}  // namespace mdseg
