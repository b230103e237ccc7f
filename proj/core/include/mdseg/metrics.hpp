#pragma once

#include <vector>

#include "mdseg/tensor.hpp"

namespace mdseg {

struct DiceJaccard {
  double dc = 0, jc = 0;  // percent
};

/// dc = 200 |P∩G| / (|P|+|G|), jc = 100 |P∩G| / |P∪G|.
/// Both-empty convention: (100, 100); one side empty: (0, 0).
DiceJaccard dice_jaccard(const Tensor<std::uint8_t>& pred,
                         const Tensor<std::uint8_t>& gt);

struct SurfaceDistances {
  bool defined = false;  // false when either mask is empty
  double hd = 0, asd = 0;
};

/// Boundary pixels are mask pixels with a 4-neighbor outside the mask (image
/// border counts as outside). hd = symmetric Hausdorff over the two boundary
/// sets; asd = mean nearest-neighbor distance pooled over both sets.
SurfaceDistances surface_distances(const Tensor<std::uint8_t>& pred,
                                   const Tensor<std::uint8_t>& gt);

struct Silhouette {
  bool defined = false;  // false with < 2 distinct labels
  double value = 0;
};

/// Mean of s(i) = (b(i) - a(i)) / max(a(i), b(i)); singleton clusters score 0.
Silhouette silhouette(const Tensor<double>& features, const std::vector<int>& labels);

/// Adjusted Rand index between two labelings (any integer label values).
double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b);

}  // namespace mdseg
