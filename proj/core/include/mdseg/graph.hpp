#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <limits>
#include <unordered_map>
#include <vector>

#include "mdseg/tensor.hpp"

namespace mdseg {

/// Tape-based reverse-mode differentiation over Tensor<T>.
///
/// Ops append nodes to the tape; node ids grow monotonically, so reverse id
/// order is a valid topological order for the backward sweep. One graph per
/// training step; reset() or a fresh graph starts the next step. backward()
/// may be called once per tape; a second call without reset throws.
///
/// Accumulation orders are fixed (sequential, row-major) so forward results
/// are bit-identical across runs. Scalar reductions accumulate in double.
template <typename T>
class Graph {
 public:
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

  struct Value {
    std::size_t id = npos;
    bool valid() const { return id != npos; }
  };

  using GradMap = std::unordered_map<std::size_t, Tensor<T>>;
  using BackwardFn = std::function<void(Graph&, const Tensor<T>&)>;

  explicit Graph(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  std::size_t node_count() const { return nodes_.size(); }

  Value leaf(Tensor<T> t, bool requires_grad = false) {
    return push(std::move(t), requires_grad, nullptr);
  }
  Value constant(Tensor<T> t) { return leaf(std::move(t), false); }
  Value constant_scalar(T v) { return leaf(Tensor<T>::scalar(v), false); }

  const Tensor<T>& value(Value v) const { return nodes_[v.id].value; }
  const Shape& shape(Value v) const { return nodes_[v.id].value.shape(); }
  bool requires_grad(Value v) const { return nodes_[v.id].requires_grad; }

  /// Register an externally computed op. `backward` receives the adjoint of
  /// the output and must accumulate into parent adjoints via adjoint().
  Value custom(Tensor<T> out, BackwardFn backward) {
    check_finite(out, "custom");
    return push(std::move(out), false, recording_ ? std::move(backward) : nullptr);
  }

  /// Adjoint buffer for a node, zero-initialized on first touch. Only valid
  /// during a backward sweep.
  Tensor<T>& adjoint(std::size_t id) {
    if (adjoints_[id].size() == 0) adjoints_[id] = Tensor<T>(nodes_[id].value.shape());
    return adjoints_[id];
  }

  // ------------------------------------------------------------------
  // elementwise ops (equal shapes, or scalar broadcast on either side)
  // ------------------------------------------------------------------

  Value add(Value a, Value b) { return binary(a, b, OpAdd{}); }
  Value sub(Value a, Value b) { return binary(a, b, OpSub{}); }
  Value mul(Value a, Value b) { return binary(a, b, OpMul{}); }

  Value div(Value a, Value b) {
    const Tensor<T>& bv = value(b);
    for (std::size_t i = 0; i < bv.size(); ++i)
      if (bv[i] == T(0)) throw DomainError("div: zero divisor");
    return binary(a, b, OpDiv{});
  }

  Value neg(Value a) {
    return unary(a, [](T x) { return -x; }, [](T, T) { return T(-1); });
  }
  Value exp(Value a) {
    return unary(a, [](T x) { return std::exp(x); },
                 [](T, T y) { return y; });
  }
  Value log(Value a) {
    const Tensor<T>& av = value(a);
    for (std::size_t i = 0; i < av.size(); ++i)
      if (av[i] <= T(0)) throw DomainError("log: non-positive input");
    return unary(a, [](T x) { return std::log(x); },
                 [](T x, T) { return T(1) / x; });
  }
  Value relu(Value a) {
    return unary(a, [](T x) { return x > T(0) ? x : T(0); },
                 [](T x, T) { return x > T(0) ? T(1) : T(0); });
  }
  Value leaky_relu(Value a, T slope) {
    return unary(a, [slope](T x) { return x > T(0) ? x : slope * x; },
                 [slope](T x, T) { return x > T(0) ? T(1) : slope; });
  }
  Value clamp(Value a, T lo, T hi) {
    return unary(a, [lo, hi](T x) { return std::min(std::max(x, lo), hi); },
                 [lo, hi](T x, T) { return (x > lo && x < hi) ? T(1) : T(0); });
  }

  // ------------------------------------------------------------------
  // convolution and pooling (NCHW)
  // ------------------------------------------------------------------

  /// Cross-correlation, weight layout (out_ch, in_ch, k, k), bias (out_ch).
  Value conv2d(Value x, Value w, Value bias, int stride = 1, int pad = 0) {
    const Tensor<T>& xv = value(x);
    const Tensor<T>& wv = value(w);
    const Tensor<T>& bv = value(bias);
    require(xv.rank() == 4 && wv.rank() == 4, "conv2d: x and w must be rank 4");
    require(wv.dim(2) == wv.dim(3), "conv2d: kernel must be square");
    require(xv.c() == wv.dim(1), "conv2d: input channels " + std::to_string(xv.c()) +
                                     " != kernel channels " + std::to_string(wv.dim(1)));
    require(bv.rank() == 1 && bv.dim(0) == wv.dim(0), "conv2d: bias must be (out_ch)");
    require(stride >= 1, "conv2d: stride must be >= 1");
    const long K = long(wv.dim(2));
    const long H = long(xv.h()), W = long(xv.w());
    require(H + 2 * pad >= K && W + 2 * pad >= K, "conv2d: kernel exceeds padded input");
    const long Ho = (H + 2 * pad - K) / stride + 1;
    const long Wo = (W + 2 * pad - K) / stride + 1;
    const std::size_t N = xv.n(), O = wv.dim(0), I = xv.c();

    Tensor<T> out(Shape{N, O, std::size_t(Ho), std::size_t(Wo)});
    conv_forward(xv, wv, bv, out, stride, pad);
    check_finite(out, "conv2d");

    std::size_t xid = x.id, wid = w.id, bid = bias.id;
    return push(std::move(out), false,
                make_backward([xid, wid, bid, stride, pad, N, O, I, Ho, Wo, K, H, W](
                                  Graph& g, const Tensor<T>& go) {
                  const Tensor<T>& xv = g.nodes_[xid].value;
                  const Tensor<T>& wv = g.nodes_[wid].value;
                  conv_backward(xv, wv, go, g.adjoint(xid), g.adjoint(wid),
                                g.adjoint(bid), stride, pad);
                  (void)N; (void)O; (void)I; (void)Ho; (void)Wo; (void)K; (void)H; (void)W;
                }));
  }

  Value maxpool2x(Value x) {
    const Tensor<T>& xv = value(x);
    require(xv.rank() == 4, "maxpool2x: rank 4 required");
    require(xv.h() % 2 == 0 && xv.w() % 2 == 0, "maxpool2x: spatial dims must be even");
    const std::size_t N = xv.n(), C = xv.c(), Ho = xv.h() / 2, Wo = xv.w() / 2;
    Tensor<T> out(Shape{N, C, Ho, Wo});
    std::vector<std::uint32_t> arg(out.size());
    std::size_t oi = 0;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < Ho; ++y)
          for (std::size_t xo = 0; xo < Wo; ++xo, ++oi) {
            T best = xv.at(n, c, 2 * y, 2 * xo);
            std::uint32_t bi = 0;
            static constexpr int dy[4] = {0, 0, 1, 1};
            static constexpr int dx[4] = {0, 1, 0, 1};
            for (int k = 1; k < 4; ++k) {
              T v = xv.at(n, c, 2 * y + dy[k], 2 * xo + dx[k]);
              if (v > best) { best = v; bi = std::uint32_t(k); }
            }
            out[oi] = best;
            arg[oi] = bi;
          }
    check_finite(out, "maxpool2x");
    std::size_t xid = x.id;
    return push(std::move(out), false,
                make_backward([xid, arg = std::move(arg), N, C, Ho, Wo](
                                  Graph& g, const Tensor<T>& go) {
                  Tensor<T>& gx = g.adjoint(xid);
                  static constexpr int dy[4] = {0, 0, 1, 1};
                  static constexpr int dx[4] = {0, 1, 0, 1};
                  std::size_t oi = 0;
                  for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t c = 0; c < C; ++c)
                      for (std::size_t y = 0; y < Ho; ++y)
                        for (std::size_t xo = 0; xo < Wo; ++xo, ++oi) {
                          int k = int(arg[oi]);
                          gx.at(n, c, 2 * y + dy[k], 2 * xo + dx[k]) += go[oi];
                        }
                }));
  }

  Value avgpool2x(Value x) {
    const Tensor<T>& xv = value(x);
    require(xv.rank() == 4, "avgpool2x: rank 4 required");
    require(xv.h() % 2 == 0 && xv.w() % 2 == 0, "avgpool2x: spatial dims must be even");
    const std::size_t N = xv.n(), C = xv.c(), Ho = xv.h() / 2, Wo = xv.w() / 2;
    Tensor<T> out(Shape{N, C, Ho, Wo});
    std::size_t oi = 0;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < Ho; ++y)
          for (std::size_t xo = 0; xo < Wo; ++xo, ++oi)
            out[oi] = (xv.at(n, c, 2 * y, 2 * xo) + xv.at(n, c, 2 * y, 2 * xo + 1) +
                       xv.at(n, c, 2 * y + 1, 2 * xo) + xv.at(n, c, 2 * y + 1, 2 * xo + 1)) /
                      T(4);
    check_finite(out, "avgpool2x");
    std::size_t xid = x.id;
    return push(std::move(out), false,
                make_backward([xid, N, C, Ho, Wo](Graph& g, const Tensor<T>& go) {
                  Tensor<T>& gx = g.adjoint(xid);
                  std::size_t oi = 0;
                  for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t c = 0; c < C; ++c)
                      for (std::size_t y = 0; y < Ho; ++y)
                        for (std::size_t xo = 0; xo < Wo; ++xo, ++oi) {
                          T q = go[oi] / T(4);
                          gx.at(n, c, 2 * y, 2 * xo) += q;
                          gx.at(n, c, 2 * y, 2 * xo + 1) += q;
                          gx.at(n, c, 2 * y + 1, 2 * xo) += q;
                          gx.at(n, c, 2 * y + 1, 2 * xo + 1) += q;
                        }
                }));
  }

  /// NCHW -> (N, C) mean over the spatial plane.
  Value global_avg_pool(Value x) {
    const Tensor<T>& xv = value(x);
    require(xv.rank() == 4, "global_avg_pool: rank 4 required");
    const std::size_t N = xv.n(), C = xv.c(), HW = xv.h() * xv.w();
    Tensor<T> out(Shape{N, C});
    const T* src = xv.data();
    for (std::size_t nc = 0; nc < N * C; ++nc) {
      double acc = 0;
      for (std::size_t i = 0; i < HW; ++i) acc += double(src[nc * HW + i]);
      out[nc] = T(acc / double(HW));
    }
    check_finite(out, "global_avg_pool");
    std::size_t xid = x.id;
    return push(std::move(out), false,
                make_backward([xid, N, C, HW](Graph& g, const Tensor<T>& go) {
                  Tensor<T>& gx = g.adjoint(xid);
                  for (std::size_t nc = 0; nc < N * C; ++nc) {
                    T q = go[nc] / T(HW);
                    for (std::size_t i = 0; i < HW; ++i) gx[nc * HW + i] += q;
                  }
                }));
  }

  Value upsample2x_nearest(Value x) {
    const Tensor<T>& xv = value(x);
    require(xv.rank() == 4, "upsample2x: rank 4 required");
    const std::size_t N = xv.n(), C = xv.c(), H = xv.h(), W = xv.w();
    Tensor<T> out(Shape{N, C, 2 * H, 2 * W});
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t xo = 0; xo < W; ++xo) {
            T v = xv.at(n, c, y, xo);
            out.at(n, c, 2 * y, 2 * xo) = v;
            out.at(n, c, 2 * y, 2 * xo + 1) = v;
            out.at(n, c, 2 * y + 1, 2 * xo) = v;
            out.at(n, c, 2 * y + 1, 2 * xo + 1) = v;
          }
    check_finite(out, "upsample2x");
    std::size_t xid = x.id;
    return push(std::move(out), false,
                make_backward([xid, N, C, H, W](Graph& g, const Tensor<T>& go) {
                  Tensor<T>& gx = g.adjoint(xid);
                  for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t c = 0; c < C; ++c)
                      for (std::size_t y = 0; y < H; ++y)
                        for (std::size_t xo = 0; xo < W; ++xo)
                          gx.at(n, c, y, xo) += go.at(n, c, 2 * y, 2 * xo) +
                                                go.at(n, c, 2 * y, 2 * xo + 1) +
                                                go.at(n, c, 2 * y + 1, 2 * xo) +
                                                go.at(n, c, 2 * y + 1, 2 * xo + 1);
                }));
  }

  // ------------------------------------------------------------------
  // reductions, softmax, concat
  // ------------------------------------------------------------------

  Value sum(Value x) { return reduce(x, false); }
  Value mean(Value x) { return reduce(x, true); }

  /// Numerically stable softmax over the channel axis of NCHW.
  Value softmax_channel(Value x) {
    const Tensor<T>& xv = value(x);
    require(xv.rank() == 4, "softmax_channel: rank 4 required");
    require(xv.size() > 0, "softmax_channel: empty tensor");
    const std::size_t N = xv.n(), C = xv.c(), HW = xv.h() * xv.w();
    Tensor<T> out(xv.shape());
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t p = 0; p < HW; ++p) {
        T m = xv[(n * C) * HW + p];
        for (std::size_t c = 1; c < C; ++c)
          m = std::max(m, xv[(n * C + c) * HW + p]);
        double z = 0;
        for (std::size_t c = 0; c < C; ++c) {
          T e = std::exp(xv[(n * C + c) * HW + p] - m);
          out[(n * C + c) * HW + p] = e;
          z += double(e);
        }
        for (std::size_t c = 0; c < C; ++c)
          out[(n * C + c) * HW + p] = T(double(out[(n * C + c) * HW + p]) / z);
      }
    check_finite(out, "softmax_channel");
    std::size_t xid = x.id, oid = nodes_.size();
    return push(std::move(out), false,
                make_backward([xid, oid, N, C, HW](Graph& g, const Tensor<T>& go) {
                  const Tensor<T>& p = g.nodes_[oid].value;
                  Tensor<T>& gx = g.adjoint(xid);
                  for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t px = 0; px < HW; ++px) {
                      double dot = 0;
                      for (std::size_t c = 0; c < C; ++c)
                        dot += double(go[(n * C + c) * HW + px]) *
                               double(p[(n * C + c) * HW + px]);
                      for (std::size_t c = 0; c < C; ++c) {
                        std::size_t i = (n * C + c) * HW + px;
                        gx[i] += p[i] * (go[i] - T(dot));
                      }
                    }
                }));
  }

  Value concat_channel(Value a, Value b) {
    const Tensor<T>& av = value(a);
    const Tensor<T>& bv = value(b);
    require(av.rank() == 4 && bv.rank() == 4, "concat_channel: rank 4 required");
    require(av.n() == bv.n() && av.h() == bv.h() && av.w() == bv.w(),
            "concat_channel: non-channel dims must agree");
    const std::size_t N = av.n(), Ca = av.c(), Cb = bv.c(), HW = av.h() * av.w();
    Tensor<T> out(Shape{N, Ca + Cb, av.h(), av.w()});
    for (std::size_t n = 0; n < N; ++n) {
      std::copy(av.data() + n * Ca * HW, av.data() + (n + 1) * Ca * HW,
                out.data() + n * (Ca + Cb) * HW);
      std::copy(bv.data() + n * Cb * HW, bv.data() + (n + 1) * Cb * HW,
                out.data() + (n * (Ca + Cb) + Ca) * HW);
    }
    std::size_t aid = a.id, bid = b.id;
    return push(std::move(out), false,
                make_backward([aid, bid, N, Ca, Cb, HW](Graph& g, const Tensor<T>& go) {
                  Tensor<T>& ga = g.adjoint(aid);
                  Tensor<T>& gb = g.adjoint(bid);
                  for (std::size_t n = 0; n < N; ++n) {
                    for (std::size_t i = 0; i < Ca * HW; ++i)
                      ga[n * Ca * HW + i] += go[n * (Ca + Cb) * HW + i];
                    for (std::size_t i = 0; i < Cb * HW; ++i)
                      gb[n * Cb * HW + i] += go[(n * (Ca + Cb) + Ca) * HW + i];
                  }
                }));
  }

  /// Select rows of a rank-2 tensor (duplicates allowed).
  Value gather_rows(Value x, std::vector<std::size_t> rows) {
    const Tensor<T>& xv = value(x);
    require(xv.rank() == 2, "gather_rows: rank 2 required");
    const std::size_t D = xv.dim(1);
    for (std::size_t r : rows) require(r < xv.dim(0), "gather_rows: row out of range");
    Tensor<T> out(Shape{rows.size(), D});
    for (std::size_t i = 0; i < rows.size(); ++i)
      std::copy(xv.data() + rows[i] * D, xv.data() + (rows[i] + 1) * D,
                out.data() + i * D);
    std::size_t xid = x.id;
    return push(std::move(out), false,
                make_backward([xid, rows = std::move(rows), D](Graph& g,
                                                               const Tensor<T>& go) {
                  Tensor<T>& gx = g.adjoint(xid);
                  for (std::size_t i = 0; i < rows.size(); ++i)
                    for (std::size_t d = 0; d < D; ++d)
                      gx[rows[i] * D + d] += go[i * D + d];
                }));
  }

  /// Scalar combination sum_i coeffs[i] * scalars[i], accumulated in double.
  Value weighted_sum(const std::vector<Value>& scalars, const std::vector<double>& coeffs) {
    require(scalars.size() == coeffs.size() && !scalars.empty(),
            "weighted_sum: need matching non-empty lists");
    double acc = 0;
    for (std::size_t i = 0; i < scalars.size(); ++i) {
      require(value(scalars[i]).is_scalar(), "weighted_sum: scalar inputs required");
      acc += coeffs[i] * double(value(scalars[i])[0]);
    }
    Tensor<T> out = Tensor<T>::scalar(T(acc));
    check_finite(out, "weighted_sum");
    std::vector<std::size_t> ids(scalars.size());
    for (std::size_t i = 0; i < scalars.size(); ++i) ids[i] = scalars[i].id;
    return push(std::move(out), false,
                make_backward([ids, coeffs](Graph& g, const Tensor<T>& go) {
                  for (std::size_t i = 0; i < ids.size(); ++i)
                    g.adjoint(ids[i])[0] += T(coeffs[i]) * go[0];
                }));
  }

  // ------------------------------------------------------------------
  // backward
  // ------------------------------------------------------------------

  /// Reverse sweep from a scalar loss. Returns the gradient for every
  /// requires-grad leaf (zeros for leaves the loss does not depend on).
  GradMap backward(Value loss) {
    require(recording_, "backward: graph was built in no-grad mode");
    require(value(loss).is_scalar(), "backward: loss must be scalar");
    if (backward_done_)
      throw ContractViolation("backward: tape already differentiated; reset() first");
    backward_done_ = true;

    adjoints_.assign(nodes_.size(), Tensor<T>());
    adjoint(loss.id)[0] = T(1);
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      if (adjoints_[id].size() == 0) continue;        // node does not affect loss
      if (nodes_[id].backward) nodes_[id].backward(*this, adjoints_[id]);
    }

    GradMap grads;
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
      if (!nodes_[id].requires_grad) continue;
      if (adjoints_[id].size() != 0)
        grads.emplace(id, std::move(adjoints_[id]));
      else
        grads.emplace(id, Tensor<T>(nodes_[id].value.shape()));
    }
    adjoints_.clear();
    return grads;
  }

  void reset() {
    nodes_.clear();
    adjoints_.clear();
    backward_done_ = false;
  }

 private:
  struct Node {
    Tensor<T> value;
    bool requires_grad = false;
    BackwardFn backward;
  };

  struct OpAdd {
    static T fwd(T a, T b) { return a + b; }
    static T da(T, T) { return T(1); }
    static T db(T, T) { return T(1); }
  };
  struct OpSub {
    static T fwd(T a, T b) { return a - b; }
    static T da(T, T) { return T(1); }
    static T db(T, T) { return T(-1); }
  };
  struct OpMul {
    static T fwd(T a, T b) { return a * b; }
    static T da(T, T b) { return b; }
    static T db(T a, T) { return a; }
  };
  struct OpDiv {
    static T fwd(T a, T b) { return a / b; }
    static T da(T, T b) { return T(1) / b; }
    static T db(T a, T b) { return -a / (b * b); }
  };

  BackwardFn make_backward(BackwardFn fn) {
    return recording_ ? std::move(fn) : nullptr;
  }

  Value push(Tensor<T> t, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(t), requires_grad, std::move(fn)});
    return Value{nodes_.size() - 1};
  }

  static void check_finite(const Tensor<T>& t, const char* op) {
    double acc = 0;
    for (std::size_t i = 0; i < t.size(); ++i) acc += std::abs(double(t[i]));
    if (!std::isfinite(acc))
      throw NumericsError(std::string(op) + ": non-finite value produced");
  }

  template <typename Op>
  Value binary(Value a, Value b, Op) {
    const Tensor<T>& av = value(a);
    const Tensor<T>& bv = value(b);
    const bool as = av.is_scalar(), bs = bv.is_scalar();
    require(as || bs || av.same_shape(bv),
            "elementwise: shapes " + shape_str(av.shape()) + " vs " +
                shape_str(bv.shape()) + " (only equal-shape or scalar broadcast)");
    const Tensor<T>& big = bs ? av : bv;
    Tensor<T> out(big.shape());
    if (as && !bs) {
      T s = av[0];
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = Op::fwd(s, bv[i]);
    } else if (bs && !as) {
      T s = bv[0];
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = Op::fwd(av[i], s);
    } else {
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = Op::fwd(av[i], bv[i]);
    }
    check_finite(out, "elementwise");
    std::size_t aid = a.id, bid = b.id;
    return push(std::move(out), false,
                make_backward([aid, bid, as, bs](Graph& g, const Tensor<T>& go) {
                  const Tensor<T>& av = g.nodes_[aid].value;
                  const Tensor<T>& bv = g.nodes_[bid].value;
                  Tensor<T>& ga = g.adjoint(aid);
                  Tensor<T>& gb = g.adjoint(bid);
                  for (std::size_t i = 0; i < go.size(); ++i) {
                    T x = as ? av[0] : av[i];
                    T y = bs ? bv[0] : bv[i];
                    // broadcast reduction: scalar side accumulates over all elems
                    ga[as ? 0 : i] += Op::da(x, y) * go[i];
                    gb[bs ? 0 : i] += Op::db(x, y) * go[i];
                  }
                }));
  }

  template <typename F, typename G>
  Value unary(Value a, F f, G dfdx) {
    const Tensor<T>& av = value(a);
    Tensor<T> out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
    check_finite(out, "unary");
    std::size_t aid = a.id, oid = nodes_.size();
    return push(std::move(out), false,
                make_backward([aid, oid, dfdx](Graph& g, const Tensor<T>& go) {
                  const Tensor<T>& av = g.nodes_[aid].value;
                  const Tensor<T>& ov = g.nodes_[oid].value;
                  Tensor<T>& ga = g.adjoint(aid);
                  for (std::size_t i = 0; i < go.size(); ++i)
                    ga[i] += dfdx(av[i], ov[i]) * go[i];
                }));
  }

  Value reduce(Value x, bool take_mean) {
    const Tensor<T>& xv = value(x);
    require(xv.size() > 0, "reduce: empty tensor");
    double acc = 0;
    for (std::size_t i = 0; i < xv.size(); ++i) acc += double(xv[i]);
    if (take_mean) acc /= double(xv.size());
    Tensor<T> out = Tensor<T>::scalar(T(acc));
    check_finite(out, take_mean ? "mean" : "sum");
    std::size_t xid = x.id, n = xv.size();
    return push(std::move(out), false,
                make_backward([xid, n, take_mean](Graph& g, const Tensor<T>& go) {
                  Tensor<T>& gx = g.adjoint(xid);
                  T q = take_mean ? go[0] / T(n) : go[0];
                  for (std::size_t i = 0; i < n; ++i) gx[i] += q;
                }));
  }

  // Direct convolution; stride-1 inner loops are contiguous over x.
  static void conv_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                           Tensor<T>& out, int stride, int pad) {
    const long N = long(x.n()), I = long(x.c()), H = long(x.h()), W = long(x.w());
    const long O = long(w.dim(0)), K = long(w.dim(2));
    const long Ho = long(out.h()), Wo = long(out.w());
    for (long n = 0; n < N; ++n)
      for (long o = 0; o < O; ++o) {
        T* op = &out.at(n, o, 0, 0);
        const T bias = b[o];
        for (long i = 0; i < Ho * Wo; ++i) op[i] = bias;
        for (long i = 0; i < I; ++i) {
          const T* xp = &x.at(n, i, 0, 0);
          const T* wp = &w.at(o, i, 0, 0);
          for (long ky = 0; ky < K; ++ky)
            for (long kx = 0; kx < K; ++kx) {
              const T wv = wp[ky * K + kx];
              if (wv == T(0)) continue;
              if (stride == 1) {
                // valid output x-range for this tap
                const long x0 = std::max(0l, pad - kx);
                const long x1 = std::min(Wo, W + pad - kx);
                for (long y = 0; y < Ho; ++y) {
                  const long yy = y - pad + ky;
                  if (yy < 0 || yy >= H) continue;
                  T* orow = op + y * Wo;
                  const T* xrow = xp + yy * W - pad + kx;
                  for (long xo = x0; xo < x1; ++xo) orow[xo] += wv * xrow[xo];
                }
              } else {
                for (long y = 0; y < Ho; ++y) {
                  const long yy = y * stride - pad + ky;
                  if (yy < 0 || yy >= H) continue;
                  for (long xo = 0; xo < Wo; ++xo) {
                    const long xx = xo * stride - pad + kx;
                    if (xx < 0 || xx >= W) continue;
                    op[y * Wo + xo] += wv * xp[yy * W + xx];
                  }
                }
              }
            }
        }
      }
  }

  static void conv_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& go,
                            Tensor<T>& gx, Tensor<T>& gw, Tensor<T>& gb, int stride,
                            int pad) {
    const long N = long(x.n()), I = long(x.c()), H = long(x.h()), W = long(x.w());
    const long O = long(w.dim(0)), K = long(w.dim(2));
    const long Ho = long(go.h()), Wo = long(go.w());
    // bias
    for (long o = 0; o < O; ++o) {
      double acc = 0;
      for (long n = 0; n < N; ++n) {
        const T* gp = &go.at(n, o, 0, 0);
        for (long i = 0; i < Ho * Wo; ++i) acc += double(gp[i]);
      }
      gb[o] += T(acc);
    }
    // weights: gw[o,i,ky,kx] += sum_n,y,x go[n,o,y,x] * x[n,i,ys+ky-p,xs+kx-p]
    for (long o = 0; o < O; ++o)
      for (long i = 0; i < I; ++i)
        for (long ky = 0; ky < K; ++ky)
          for (long kx = 0; kx < K; ++kx) {
            double acc = 0;
            for (long n = 0; n < N; ++n) {
              const T* gp = &go.at(n, o, 0, 0);
              const T* xp = &x.at(n, i, 0, 0);
              if (stride == 1) {
                const long x0 = std::max(0l, pad - kx);
                const long x1 = std::min(Wo, W + pad - kx);
                for (long y = 0; y < Ho; ++y) {
                  const long yy = y - pad + ky;
                  if (yy < 0 || yy >= H) continue;
                  const T* grow = gp + y * Wo;
                  const T* xrow = xp + yy * W - pad + kx;
                  for (long xo = x0; xo < x1; ++xo)
                    acc += double(grow[xo]) * double(xrow[xo]);
                }
              } else {
                for (long y = 0; y < Ho; ++y) {
                  const long yy = y * stride - pad + ky;
                  if (yy < 0 || yy >= H) continue;
                  for (long xo = 0; xo < Wo; ++xo) {
                    const long xx = xo * stride - pad + kx;
                    if (xx < 0 || xx >= W) continue;
                    acc += double(gp[y * Wo + xo]) * double(xp[yy * W + xx]);
                  }
                }
              }
            }
            gw.at(o, i, ky, kx) += T(acc);
          }
    // input: gx[n,i,yy,xx] += sum_o,ky,kx w[o,i,ky,kx] * go[n,o,(yy+p-ky)/s,(xx+p-kx)/s]
    for (long n = 0; n < N; ++n)
      for (long i = 0; i < I; ++i) {
        T* gxp = &gx.at(n, i, 0, 0);
        for (long o = 0; o < O; ++o) {
          const T* gp = &go.at(n, o, 0, 0);
          const T* wp = &w.at(o, i, 0, 0);
          for (long ky = 0; ky < K; ++ky)
            for (long kx = 0; kx < K; ++kx) {
              const T wv = wp[ky * K + kx];
              if (wv == T(0)) continue;
              if (stride == 1) {
                const long x0 = std::max(0l, pad - kx);
                const long x1 = std::min(Wo, W + pad - kx);
                for (long y = 0; y < Ho; ++y) {
                  const long yy = y - pad + ky;
                  if (yy < 0 || yy >= H) continue;
                  const T* grow = gp + y * Wo;
                  T* gxrow = gxp + yy * W - pad + kx;
                  for (long xo = x0; xo < x1; ++xo) gxrow[xo] += wv * grow[xo];
                }
              } else {
                for (long y = 0; y < Ho; ++y) {
                  const long yy = y * stride - pad + ky;
                  if (yy < 0 || yy >= H) continue;
                  for (long xo = 0; xo < Wo; ++xo) {
                    const long xx = xo * stride - pad + kx;
                    if (xx < 0 || xx >= W) continue;
                    gxp[yy * W + xx] += wv * gp[y * Wo + xo];
                  }
                }
              }
            }
        }
      }
  }

  std::vector<Node> nodes_;
  std::vector<Tensor<T>> adjoints_;
  bool recording_ = true;
  bool backward_done_ = false;
};

template <typename T>
using GraphValue = typename Graph<T>::Value;

}  // namespace mdseg
