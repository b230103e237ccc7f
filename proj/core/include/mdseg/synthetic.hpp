#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mdseg/io.hpp"
#include "mdseg/rng.hpp"

namespace mdseg {

/// Photometric domain style; geometry is domain-independent so a
/// domain-invariant model can in principle segment every domain perfectly.
struct DomainStyle {
  double offset = 0.0;
  double contrast = 1.0;
  double noise_sigma = 0.03;
  int texture_freq = 0;       // 0 = no texture stripes
  double texture_amp = 0.08;  // stripe amplitude when texture_freq > 0
};

struct SyntheticConfig {
  int k = 4;                        // true domain count
  std::vector<DomainStyle> styles;  // size k; empty -> default_styles(k)
  int image_size = 32;
  int shapes_min = 1, shapes_max = 3;
  double radius_min = 0.10, radius_max = 0.28;  // shape radii, fraction of size
  int labeled_count = 8;
  int unlabeled_count = 400;
  int test_per_domain = 20;
  int labeled_domain = 1;              // 1-based; labeled split drawn only here
  double fg_min = 0.08, fg_max = 0.45; // per-item foreground area bounds
};

/// Offsets and contrasts move domain means in the same direction for every
/// pair, so the pairwise-mean gap is at least the offset gap (asserted at
/// generation time).
std::vector<DomainStyle> default_styles(int k);

void validate(const SyntheticConfig& c);

struct RenderedItem {
  Tensor<float> image;        // [0,1], already 8-bit quantized values
  Tensor<std::uint8_t> mask;  // class indices {0,1}
};

/// Deterministic given (config, rng); retries geometry until the foreground
/// fraction lands in [fg_min, fg_max].
RenderedItem render_item(const SyntheticConfig& c, int domain_index_0, Rng& rng);

/// Writes images/, masks/, manifest.jsonl under out_dir and returns the
/// manifest with resolved paths. Labeled items come only from labeled_domain;
/// unlabeled and test items are stratified across all k domains.
std::vector<ManifestItem> gen_synthetic(const SyntheticConfig& c, std::uint64_t seed,
                                        const std::string& out_dir);

}  // namespace mdseg
