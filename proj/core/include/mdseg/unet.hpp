#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mdseg/graph.hpp"
#include "mdseg/rng.hpp"

namespace mdseg {

struct UNetConfig {
  std::size_t in_channels = 1;
  std::size_t base_width = 8;   // channels at level 1; doubles per level
  std::size_t depth = 5;        // L encoder levels
  std::size_t num_classes = 2;
  double negative_slope = 0.01; // leaky-relu
};

inline void validate(const UNetConfig& c) {
  require(c.depth >= 2, "unet: depth must be >= 2");
  require(c.in_channels >= 1 && c.base_width >= 1 && c.num_classes >= 2,
          "unet: channels/classes must be positive (>= 2 classes)");
}

/// Ordered named parameter set; teacher and student share this layout.
template <typename T>
struct ModelParams {
  std::vector<std::string> names;
  std::vector<Tensor<T>> tensors;

  std::size_t count() const { return tensors.size(); }
  bool same_layout(const ModelParams& o) const {
    if (names != o.names) return false;
    for (std::size_t i = 0; i < tensors.size(); ++i)
      if (!tensors[i].same_shape(o.tensors[i])) return false;
    return true;
  }
};

/// Encoder-decoder with skip connections. Per level: two conv3x3+leaky-relu;
/// maxpool2x down; nearest-upsample2x + conv1x1 + skip concat + two conv3x3
/// up; conv1x1 head. Encoder taps (post-block maps) and their global-average
/// pooled vectors are exposed for feature clustering.
template <typename T>
class UNet {
 public:
  using Value = typename Graph<T>::Value;

  explicit UNet(UNetConfig cfg) : cfg_(cfg) { validate(cfg_); }

  const UNetConfig& config() const { return cfg_; }
  std::size_t channels_at(std::size_t level) const {  // level in [1, depth]
    return cfg_.base_width << (level - 1);
  }

  ModelParams<T> init_params(std::uint64_t seed) const {
    ModelParams<T> p;
    const std::size_t L = cfg_.depth;
    std::size_t idx = 0;
    auto conv = [&](const std::string& name, std::size_t out_c, std::size_t in_c,
                    std::size_t k) {
      Rng r = Rng::keyed(seed, {rng_stream::kInit, idx++});
      const double bound = std::sqrt(1.0 / double(in_c * k * k));
      Tensor<T> w(Shape{out_c, in_c, k, k});
      for (std::size_t i = 0; i < w.size(); ++i)
        w[i] = T(r.uniform(-bound, bound));
      p.names.push_back(name + ".w");
      p.tensors.push_back(std::move(w));
      p.names.push_back(name + ".b");
      p.tensors.push_back(Tensor<T>(Shape{out_c}));
    };
    for (std::size_t l = 1; l <= L; ++l) {
      const std::size_t c = channels_at(l);
      const std::size_t in_c = (l == 1) ? cfg_.in_channels : channels_at(l - 1);
      conv("enc" + std::to_string(l) + ".conv1", c, in_c, 3);
      conv("enc" + std::to_string(l) + ".conv2", c, c, 3);
    }
    for (std::size_t l = L - 1; l >= 1; --l) {
      const std::size_t c = channels_at(l);
      conv("up" + std::to_string(l), c, channels_at(l + 1), 1);
      conv("dec" + std::to_string(l) + ".conv1", c, 2 * c, 3);
      conv("dec" + std::to_string(l) + ".conv2", c, c, 3);
    }
    conv("head", cfg_.num_classes, cfg_.base_width, 1);
    return p;
  }

  /// Register all parameters as graph leaves (fixed order). The returned
  /// handles are what backward() keys gradients on.
  struct Bound {
    std::vector<Value> leaves;
  };
  Bound bind(Graph<T>& g, const ModelParams<T>& p, bool requires_grad) const {
    Bound b;
    b.leaves.reserve(p.count());
    for (const auto& t : p.tensors) b.leaves.push_back(g.leaf(t, requires_grad));
    return b;
  }

  struct Out {
    Value logits{};                 // invalid when encoder_only
    std::vector<Value> taps;        // L entries, level l spatial H/2^(l-1)
    std::vector<Value> pooled;      // L entries, (N, channels_at(l))
  };

  Out forward(Graph<T>& g, const Bound& b, Value x, bool encoder_only = false) const {
    const Tensor<T>& xv = g.value(x);
    require(xv.rank() == 4 && xv.c() == cfg_.in_channels,
            "unet forward: input must be (N," + std::to_string(cfg_.in_channels) +
                ",H,W)");
    const std::size_t div = std::size_t(1) << (cfg_.depth - 1);
    require(xv.h() % div == 0 && xv.w() % div == 0,
            "unet forward: spatial dims must be divisible by 2^(depth-1)");

    const std::size_t L = cfg_.depth;
    const T slope = T(cfg_.negative_slope);
    std::size_t idx = 0;
    auto conv = [&](Value in, int pad) {
      Value w = b.leaves[idx], bias = b.leaves[idx + 1];
      idx += 2;
      return g.conv2d(in, w, bias, 1, pad);
    };

    Out out;
    Value cur = x;
    for (std::size_t l = 1; l <= L; ++l) {
      Value a = g.leaky_relu(conv(cur, 1), slope);
      Value t = g.leaky_relu(conv(a, 1), slope);
      out.taps.push_back(t);
      out.pooled.push_back(g.global_avg_pool(t));
      if (l < L) cur = g.maxpool2x(t);
    }
    if (encoder_only) return out;

    Value d = out.taps[L - 1];
    for (std::size_t l = L - 1; l >= 1; --l) {
      d = conv(g.upsample2x_nearest(d), 0);          // 1x1 channel halve
      d = g.concat_channel(d, out.taps[l - 1]);
      d = g.leaky_relu(conv(d, 1), slope);
      d = g.leaky_relu(conv(d, 1), slope);
    }
    out.logits = conv(d, 0);                          // 1x1 head
    return out;
  }

  /// theta_T <- alpha * theta_T + (1 - alpha) * theta_S, exactly, per element.
  static ModelParams<T> ema_update(const ModelParams<T>& teacher,
                                   const ModelParams<T>& student, T alpha) {
    require(alpha >= T(0) && alpha <= T(1), "ema_update: alpha must be in [0,1]");
    require(teacher.same_layout(student), "ema_update: parameter layout mismatch");
    ModelParams<T> out;
    out.names = teacher.names;
    out.tensors.reserve(teacher.count());
    for (std::size_t i = 0; i < teacher.count(); ++i) {
      Tensor<T> t(teacher.tensors[i].shape());
      const Tensor<T>& a = teacher.tensors[i];
      const Tensor<T>& s = student.tensors[i];
      for (std::size_t j = 0; j < t.size(); ++j)
        t[j] = alpha * a[j] + (T(1) - alpha) * s[j];
      out.tensors.push_back(std::move(t));
    }
    return out;
  }

 private:
  UNetConfig cfg_;
};

}  // namespace mdseg
