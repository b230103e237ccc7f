#include <algorithm>
#include <cmath>
#include <cstdio>

#include "mdseg/trainer.hpp"

namespace mdseg {

namespace {

// dominant eigenvector of X^T X by power iteration; zero vector if X ~ 0
std::vector<double> principal_axis(const Tensor<double>& x) {
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<double> v(d, 1.0 / std::sqrt(double(d)));
  std::vector<double> xv(n), next(d);
  for (int it = 0; it < 300; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0;
      for (std::size_t k = 0; k < d; ++k) s += x[i * d + k] * v[k];
      xv[i] = s;
    }
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < d; ++k) next[k] += x[i * d + k] * xv[i];
    double norm = 0;
    for (double e : next) norm += e * e;
    norm = std::sqrt(norm);
    if (norm < 1e-12) return std::vector<double>(d, 0.0);
    for (std::size_t k = 0; k < d; ++k) v[k] = next[k] / norm;
  }
  // sign convention: largest-magnitude component is positive
  std::size_t arg = 0;
  for (std::size_t k = 1; k < d; ++k)
    if (std::abs(v[k]) > std::abs(v[arg])) arg = k;
  if (v[arg] < 0)
    for (double& e : v) e = -e;
  return v;
}

}  // namespace

Tensor<double> pca_2d(const Tensor<double>& x) {
  require(x.rank() == 2 && x.dim(0) >= 1, "pca_2d: need an n x d matrix");
  const std::size_t n = x.dim(0), d = x.dim(1);
  Tensor<double> c = x;
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) mean[k] += x[i * d + k];
  for (std::size_t k = 0; k < d; ++k) mean[k] /= double(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) c[i * d + k] -= mean[k];

  Tensor<double> out(Shape{n, 2});
  const std::vector<double> v1 = principal_axis(c);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t k = 0; k < d; ++k) s += c[i * d + k] * v1[k];
    out.at(i, std::size_t(0)) = s;
    for (std::size_t k = 0; k < d; ++k) c[i * d + k] -= s * v1[k];  // deflate
  }
  const std::vector<double> v2 = principal_axis(c);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t k = 0; k < d; ++k) s += c[i * d + k] * v2[k];
    out.at(i, std::size_t(1)) = s;
  }
  return out;
}

EmbedResult embed_dump(const UNetConfig& mc, const ModelParams<float>& params,
                       const DataSplits& data, int layer) {
  require(layer >= 1 && std::size_t(layer) <= mc.depth,
          "embed: layer out of range");
  require(!data.test_images.empty(), "embed: empty test set");
  const std::size_t n = data.test_images.size();
  const std::size_t H = data.test_images[0].dim(0);
  const std::size_t W = data.test_images[0].dim(1);

  Tensor<float> batch(Shape{n, 1, H, W});
  for (std::size_t i = 0; i < n; ++i)
    std::copy(data.test_images[i].data(), data.test_images[i].data() + H * W,
              batch.data() + i * H * W);

  UNet<float> net(mc);
  Graph<float> g(false);
  auto b = net.bind(g, params, false);
  auto out = net.forward(g, b, g.constant(std::move(batch)), true);

  EmbedResult r;
  r.features = g.value(out.pooled[std::size_t(layer) - 1]);
  r.domains = data.test_domains;
  const Tensor<double> f64 = r.features.cast<double>();
  r.pca2 = pca_2d(f64);

  double spread = 0;
  for (std::size_t i = 0; i < r.pca2.size(); ++i)
    spread = std::max(spread, std::abs(r.pca2[i]));
  r.degenerate = spread < 1e-9;
  r.sil = silhouette(f64, r.domains);
  return r;
}

std::string embed_svg(const Tensor<double>& pca2, const std::vector<int>& domains) {
  require(pca2.rank() == 2 && pca2.dim(1) == 2, "embed_svg: need n x 2 points");
  require(pca2.dim(0) == domains.size(), "embed_svg: domain tag count mismatch");
  static const char* kPalette[] = {"#4363d8", "#e6194b", "#3cb44b", "#f58231",
                                   "#911eb4", "#46f0f0", "#f032e6", "#9a6324"};
  constexpr int kColors = 8;
  constexpr double kSize = 640, kMargin = 48, kRadius = 4.5;

  const std::size_t n = pca2.dim(0);
  double lo[2] = {pca2[0], pca2[1]}, hi[2] = {pca2[0], pca2[1]};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < 2; ++k) {
      lo[k] = std::min(lo[k], pca2.at(i, k));
      hi[k] = std::max(hi[k], pca2.at(i, k));
    }
  auto span = [&](int k) { return std::max(hi[k] - lo[k], 1e-12); };

  std::string svg;
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" "
                "height=\"%d\" viewBox=\"0 0 %d %d\">\n",
                int(kSize), int(kSize), int(kSize), int(kSize));
  svg += buf;
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::vector<int> seen;
  for (std::size_t i = 0; i < n; ++i) {
    const double cx =
        kMargin + (pca2.at(i, std::size_t(0)) - lo[0]) / span(0) * (kSize - 2 * kMargin);
    const double cy =
        kSize - kMargin -
        (pca2.at(i, std::size_t(1)) - lo[1]) / span(1) * (kSize - 2 * kMargin);
    const int dom = domains[i];
    const char* color = kPalette[((dom % kColors) + kColors) % kColors];
    std::snprintf(buf, sizeof(buf),
                  "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"%.1f\" fill=\"%s\" "
                  "fill-opacity=\"0.8\"/>\n",
                  cx, cy, kRadius, color);
    svg += buf;
    if (std::find(seen.begin(), seen.end(), dom) == seen.end()) seen.push_back(dom);
  }
  std::sort(seen.begin(), seen.end());
  for (std::size_t i = 0; i < seen.size(); ++i) {
    const char* color = kPalette[((seen[i] % kColors) + kColors) % kColors];
    std::snprintf(buf, sizeof(buf),
                  "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"5\" fill=\"%s\"/>"
                  "<text x=\"%.1f\" y=\"%.1f\" font-size=\"13\" "
                  "font-family=\"sans-serif\">domain %d</text>\n",
                  kMargin, 18.0 + 18.0 * double(i), color, kMargin + 10,
                  22.0 + 18.0 * double(i), seen[i]);
    svg += buf;
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace mdseg
