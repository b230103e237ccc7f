#pragma once

#include <cmath>
#include <cstdint>

#include "mdseg/rng.hpp"
#include "mdseg/tensor.hpp"

namespace mdseg {

struct AugConfig {
  // weak: label-preserving geometric ops
  double hflip_prob = 0.5;
  int max_shift = 2;          // pixels, each axis, uniform in [-max_shift, max_shift]
  // strong: purely photometric, never moves pixels
  double scale_min = 0.9, scale_max = 1.1;
  double gamma_min = 0.8, gamma_max = 1.25;
  double noise_sigma = 0.1;
  // mix mask area as fraction of image area
  double rho_min = 0.25, rho_max = 0.5;
};

inline void validate(const AugConfig& c) {
  require(c.hflip_prob >= 0 && c.hflip_prob <= 1, "aug: hflip_prob in [0,1]");
  require(c.max_shift >= 0, "aug: max_shift >= 0");
  require(c.scale_min <= c.scale_max && c.gamma_min <= c.gamma_max &&
              c.gamma_min > 0 && c.noise_sigma >= 0,
          "aug: bad strong-augment ranges");
  require(c.rho_min > 0 && c.rho_min <= c.rho_max && c.rho_max < 1,
          "aug: need 0 < rho_min <= rho_max < 1");
}

/// A drawn weak transform: flip first, then shift with edge replication.
/// Exposed so the paired mask can be moved identically.
struct GeomTransform {
  bool hflip = false;
  int dy = 0, dx = 0;
};

inline GeomTransform draw_geom(const AugConfig& c, Rng& r) {
  GeomTransform t;
  t.hflip = r.bernoulli(c.hflip_prob);
  t.dy = int(r.uniform_int(-std::int64_t(c.max_shift), c.max_shift));
  t.dx = int(r.uniform_int(-std::int64_t(c.max_shift), c.max_shift));
  return t;
}

template <typename T>
Tensor<T> apply_geom(const Tensor<T>& x, GeomTransform t) {
  require(x.rank() == 2, "apply_geom: H x W image expected");
  const long H = long(x.dim(0)), W = long(x.dim(1));
  Tensor<T> out(x.shape());
  for (long y = 0; y < H; ++y)
    for (long xx = 0; xx < W; ++xx) {
      long sy = std::min(H - 1, std::max(0l, y - t.dy));
      long sx = std::min(W - 1, std::max(0l, xx - t.dx));
      if (t.hflip) sx = W - 1 - sx;
      out[std::size_t(y * W + xx)] = x[std::size_t(sy * W + sx)];
    }
  return out;
}

template <typename T>
Tensor<T> weak_augment(const Tensor<T>& x, const AugConfig& c, Rng& r) {
  return apply_geom(x, draw_geom(c, r));
}

/// clamp(scale * x^gamma + noise, 0, 1); requires x in [0,1].
inline Tensor<float> strong_augment(const Tensor<float>& x, const AugConfig& c, Rng& r) {
  require(x.rank() == 2, "strong_augment: H x W image expected");
  const double scale = r.uniform(c.scale_min, c.scale_max);
  const double gamma = r.uniform(c.gamma_min, c.gamma_max);
  Tensor<float> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    require(x[i] >= 0.f && x[i] <= 1.f, "strong_augment: input outside [0,1]");
    double v = scale * std::pow(double(x[i]), gamma) + c.noise_sigma * r.normal();
    out[i] = float(std::min(1.0, std::max(0.0, v)));
  }
  return out;
}

struct MixMask {
  Tensor<float> mask;  // H x W, values exactly 0 or 1
  int top = 0, left = 0, height = 0, width = 0;
};

/// One axis-aligned rectangle of 1s with area fraction in
/// [rho_min, rho_max + box_height/(H*W) rounding slack].
inline MixMask sample_mask(std::size_t h, std::size_t w, const AugConfig& c, Rng& r) {
  require(h >= 4 && w >= 4, "sample_mask: image too small");
  const double hw = double(h * w);
  const long a_min = long(std::ceil(c.rho_min * hw));
  const long a_max = std::max(a_min, long(std::floor(c.rho_max * hw)));
  require(a_min <= long(h * w), "sample_mask: infeasible area range");

  const double rho = r.uniform(c.rho_min, c.rho_max);
  const long a_target =
      std::min(a_max, std::max(a_min, long(std::llround(rho * hw))));
  const double aspect = r.uniform(0.7, 1.0 / 0.7);
  const long bh0 = std::min(long(h), std::max(1l, long(std::llround(
                                                  std::sqrt(double(a_target) * aspect)))));

  // Nearest box height whose ceil-width keeps the area in range; if no exact
  // fit exists, take the smallest overshoot (at most bh-1 pixels).
  long best_bh = -1, best_bw = -1, best_over = -1;
  for (long off = 0; off < long(h); ++off)
    for (long s = 0; s < 2; ++s) {
      const long bh = bh0 + (s == 0 ? -off : off);
      if (bh < 1 || bh > long(h) || (off == 0 && s == 1)) continue;
      const long bw = (a_target + bh - 1) / bh;
      if (bw < 1 || bw > long(w)) continue;
      const long area = bh * bw;
      if (area < a_min) continue;
      const long over = area > a_max ? area - a_max : 0;
      if (best_bh < 0 || over < best_over) {
        best_bh = bh;
        best_bw = bw;
        best_over = over;
        if (over == 0) goto found;
      }
    }
found:
  require(best_bh > 0, "sample_mask: infeasible area range");

  MixMask m;
  m.height = int(best_bh);
  m.width = int(best_bw);
  m.top = int(r.uniform_int(0, std::int64_t(h) - best_bh));
  m.left = int(r.uniform_int(0, std::int64_t(w) - best_bw));
  m.mask = Tensor<float>(Shape{h, w});
  for (long y = m.top; y < m.top + m.height; ++y)
    for (long x = m.left; x < m.left + m.width; ++x)
      m.mask[std::size_t(y) * w + std::size_t(x)] = 1.f;
  return m;
}

/// x_in = (1-M).x_u + M.x_lb ; x_out = M.x_u + (1-M).x_lb.  With a binary
/// mask this is an exact per-pixel select, so conservation holds bit-exactly.
template <typename T>
struct CpmPair {
  Tensor<T> x_in, x_out;
};

template <typename T>
CpmPair<T> cpm_mix(const Tensor<T>& x_u, const Tensor<T>& x_lb, const MixMask& m) {
  require(x_u.same_shape(x_lb) && x_u.same_shape(m.mask),
          "cpm_mix: shapes must match");
  CpmPair<T> p{Tensor<T>(x_u.shape()), Tensor<T>(x_u.shape())};
  for (std::size_t i = 0; i < x_u.size(); ++i) {
    const bool in_box = m.mask[i] != 0.f;
    p.x_in[i] = in_box ? x_lb[i] : x_u[i];
    p.x_out[i] = in_box ? x_u[i] : x_lb[i];
  }
  return p;
}

}  // namespace mdseg
