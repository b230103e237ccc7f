#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "mdseg/graph.hpp"

namespace mdseg {

// ----------------------------------------------------------------------
// label helpers
// ----------------------------------------------------------------------

/// Per-pixel argmax over the channel axis; ties take the smallest class.
template <typename T>
Tensor<std::uint8_t> argmax_channel(const Tensor<T>& probs) {
  require(probs.rank() == 4, "argmax_channel: NCHW expected");
  const std::size_t N = probs.n(), C = probs.c(), HW = probs.h() * probs.w();
  require(C <= 255, "argmax_channel: too many classes for u8 labels");
  Tensor<std::uint8_t> out(Shape{N, probs.h(), probs.w()});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t p = 0; p < HW; ++p) {
      std::size_t best = 0;
      T bv = probs[(n * C) * HW + p];
      for (std::size_t c = 1; c < C; ++c) {
        T v = probs[(n * C + c) * HW + p];
        if (v > bv) { bv = v; best = c; }
      }
      out[n * HW + p] = std::uint8_t(best);
    }
  return out;
}

template <typename T>
Tensor<T> one_hot(const Tensor<std::uint8_t>& labels, std::size_t num_classes) {
  require(labels.rank() == 3, "one_hot: (N,H,W) labels expected");
  const std::size_t N = labels.dim(0), H = labels.dim(1), W = labels.dim(2);
  Tensor<T> out(Shape{N, num_classes, H, W});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t p = 0; p < H * W; ++p) {
      const std::uint8_t c = labels[n * H * W + p];
      require(c < num_classes, "one_hot: label out of range");
      out[(n * num_classes + c) * H * W + p] = T(1);
    }
  return out;
}

// ----------------------------------------------------------------------
// losses (graph-composed; gradients flow into probs only)
// ----------------------------------------------------------------------

/// Soft Dice with squared-sum denominator:
/// 1 - mean over (batch, class) of (2 Σ p·t + s) / (Σ p² + Σ t² + s).
template <typename T>
typename Graph<T>::Value dice_loss(Graph<T>& g, typename Graph<T>::Value probs,
                                   const Tensor<T>& target, double smooth = 1e-5) {
  const Tensor<T>& pv = g.value(probs);
  require(pv.rank() == 4 && pv.same_shape(target), "dice_loss: NCHW shape mismatch");
  require(smooth > 0, "dice_loss: smooth must be positive");
  const double hw = double(pv.h() * pv.w());

  // per-(n,c) plane sums via global average pool * (H*W)
  auto plane_sum = [&](typename Graph<T>::Value x) {
    return g.mul(g.global_avg_pool(x), g.constant_scalar(T(hw)));
  };
  Tensor<T> t2(Shape{pv.n(), pv.c()});
  for (std::size_t n = 0; n < pv.n(); ++n)
    for (std::size_t c = 0; c < pv.c(); ++c) {
      double acc = 0;
      for (std::size_t p = 0; p < pv.h() * pv.w(); ++p) {
        double v = double(target[(n * pv.c() + c) * pv.h() * pv.w() + p]);
        acc += v * v;
      }
      t2.at(n, c) = T(acc);
    }

  auto tgt = g.constant(target);
  auto s = g.constant_scalar(T(smooth));
  auto num = g.add(g.mul(g.constant_scalar(T(2)), plane_sum(g.mul(probs, tgt))), s);
  auto den = g.add(g.add(plane_sum(g.mul(probs, probs)), g.constant(t2)), s);
  return g.sub(g.constant_scalar(T(1)), g.mean(g.div(num, den)));
}

/// Mean over pixels of -Σ_c t_c log(max(p_c, eps)).
template <typename T>
typename Graph<T>::Value ce_loss(Graph<T>& g, typename Graph<T>::Value probs,
                                 const Tensor<T>& target, double eps_floor = 1e-7) {
  const Tensor<T>& pv = g.value(probs);
  require(pv.rank() == 4 && pv.same_shape(target), "ce_loss: NCHW shape mismatch");
  require(eps_floor > 0, "ce_loss: eps_floor must be positive");
  const double pixels = double(pv.n() * pv.h() * pv.w());

  auto floored = g.clamp(probs, T(eps_floor), std::numeric_limits<T>::max());
  auto ll = g.sum(g.mul(g.constant(target), g.log(floored)));
  return g.weighted_sum({ll}, {-1.0 / pixels});
}

/// Teacher probabilities are hardened to one-hot pseudo-labels (per-pixel
/// argmax) and enter as constants, so no gradient can reach the teacher.
/// l_in = Dice + CE on the "in" mix, l_out analogous, l_cpm = l_in + l_out.
template <typename T>
struct ConsistencyOut {
  typename Graph<T>::Value l_in, l_out, l_cpm;
};

template <typename T>
ConsistencyOut<T> consistency_losses(Graph<T>& g,
                                     typename Graph<T>::Value student_in_probs,
                                     typename Graph<T>::Value student_out_probs,
                                     const Tensor<T>& teacher_in_probs,
                                     const Tensor<T>& teacher_out_probs,
                                     double smooth = 1e-5, double eps_floor = 1e-7) {
  const std::size_t C = g.value(student_in_probs).c();
  Tensor<T> pin = one_hot<T>(argmax_channel(teacher_in_probs), C);
  Tensor<T> pout = one_hot<T>(argmax_channel(teacher_out_probs), C);
  ConsistencyOut<T> out;
  out.l_in = g.add(dice_loss(g, student_in_probs, pin, smooth),
                   ce_loss(g, student_in_probs, pin, eps_floor));
  out.l_out = g.add(dice_loss(g, student_out_probs, pout, smooth),
                    ce_loss(g, student_out_probs, pout, eps_floor));
  out.l_cpm = g.weighted_sum({out.l_in, out.l_out}, {1.0, 1.0});
  return out;
}

/// Supervised loss: Dice + CE against ground truth, mirroring consistency.
template <typename T>
typename Graph<T>::Value sup_loss(Graph<T>& g, typename Graph<T>::Value probs,
                                  const Tensor<T>& gt_onehot, double smooth = 1e-5,
                                  double eps_floor = 1e-7) {
  return g.add(dice_loss(g, probs, gt_onehot, smooth),
               ce_loss(g, probs, gt_onehot, eps_floor));
}

// ----------------------------------------------------------------------
// schedule and assembly
// ----------------------------------------------------------------------

struct ScheduleConfig {
  long iter_max = 1;
  long current_iter = 0;
};

/// w = exp(-5 (1 - iter/iter_max)); monotone in iter, w(iter_max) = 1.
inline double ramp_weight(const ScheduleConfig& s) {
  require(s.iter_max >= 1, "ramp_weight: iter_max must be >= 1");
  require(s.current_iter >= 0 && s.current_iter <= s.iter_max,
          "ramp_weight: iter outside [0, iter_max]");
  return std::exp(-5.0 * (1.0 - double(s.current_iter) / double(s.iter_max)));
}

/// l_total = l_sup + w (l_cpm + l_domain); throws NumericsError on non-finite
/// inputs (diverged training).
inline double total_loss(double l_sup, double l_cpm, double l_domain, double w) {
  if (!std::isfinite(l_sup) || !std::isfinite(l_cpm) || !std::isfinite(l_domain) ||
      !std::isfinite(w))
    throw NumericsError("total_loss: non-finite input");
  return l_sup + w * (l_cpm + l_domain);
}

/// Per-iteration log record; the CSV identities l_cpm = l_in + l_out,
/// l_domain = mean(l_mmd), l_total = l_sup + w(l_cpm + l_domain) are checked
/// by tests at 1e-6.
struct LossReport {
  long iter = 0;
  double l_sup = 0, l_in = 0, l_out = 0, l_cpm = 0;
  std::vector<double> l_mmd;  // per encoder layer
  double l_domain = 0, w = 0, l_total = 0;
};

}  // namespace mdseg
