#include "mdseg/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace mdseg {

namespace {
constexpr double kBg = 0.25, kFg = 0.65;
constexpr int kGeometryRetries = 200;

std::string item_name(const char* split, int idx) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%04d.pgm", split, idx);
  return buf;
}
}  // namespace

std::vector<DomainStyle> default_styles(int k) {
  require(k >= 2, "default_styles: k must be >= 2");
  if (k == 4) {
    // labeled domain (index 0) is the neutral style; contrasts decrease as
    // offsets increase so both shift the domain mean the same way. Domain 2's
    // background (0.45) sits on domain 1's fg/bg midpoint, so absolute
    // intensity alone cannot segment both domains — context must disambiguate.
    return {{0.00, 1.05, 0.03, 0},
            {0.15, 0.80, 0.05, 5},
            {-0.10, 1.35, 0.06, 9},
            {0.06, 0.85, 0.08, 13}};
  }
  std::vector<DomainStyle> s(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    const double t = double(i) / double(k - 1);
    s[std::size_t(i)] = {-0.12 + 0.37 * t, 1.45 - 0.70 * t, 0.03 + 0.05 * t, 4 * i};
  }
  return s;
}

void validate(const SyntheticConfig& c) {
  require(c.k >= 2, "synthetic: k must be >= 2");
  require(c.styles.empty() || c.styles.size() == std::size_t(c.k),
          "synthetic: styles must match k");
  require(c.image_size >= 8, "synthetic: image_size must be >= 8");
  require(c.shapes_min >= 1 && c.shapes_min <= c.shapes_max,
          "synthetic: bad shapes range");
  require(c.radius_min > 0 && c.radius_min <= c.radius_max && c.radius_max < 0.5,
          "synthetic: bad radius range");
  require(c.labeled_count >= 1, "synthetic: labeled_count must be >= 1");
  require(c.unlabeled_count >= c.k, "synthetic: need unlabeled_count >= k");
  require(c.test_per_domain >= 1, "synthetic: test_per_domain must be >= 1");
  require(c.labeled_domain >= 1 && c.labeled_domain <= c.k,
          "synthetic: labeled_domain out of range");
  require(c.fg_min > 0 && c.fg_min <= c.fg_max && c.fg_max < 1,
          "synthetic: bad foreground bounds");
  for (const auto& st : (c.styles.empty() ? default_styles(c.k) : c.styles))
    require(st.contrast > 0 && st.noise_sigma >= 0 && st.texture_freq >= 0 &&
                st.texture_amp >= 0,
            "synthetic: bad style");
}

RenderedItem render_item(const SyntheticConfig& c, int domain_index_0, Rng& rng) {
  const int S = c.image_size;
  const auto styles = c.styles.empty() ? default_styles(c.k) : c.styles;
  const DomainStyle& st = styles[std::size_t(domain_index_0)];

  Tensor<std::uint8_t> mask(Shape{std::size_t(S), std::size_t(S)});
  bool ok = false;
  for (int attempt = 0; attempt < kGeometryRetries && !ok; ++attempt) {
    std::fill(mask.data(), mask.data() + mask.size(), std::uint8_t(0));
    const long count = rng.uniform_int(c.shapes_min, c.shapes_max);
    for (long s = 0; s < count; ++s) {
      const bool ellipse = rng.bernoulli(0.5);
      const double cy = rng.uniform(0.2, 0.8) * S;
      const double cx = rng.uniform(0.2, 0.8) * S;
      const double ry = rng.uniform(c.radius_min, c.radius_max) * S;
      const double rx = rng.uniform(c.radius_min, c.radius_max) * S;
      for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
          const double dy = (y - cy) / ry, dx = (x - cx) / rx;
          const bool in = ellipse ? (dy * dy + dx * dx <= 1.0)
                                  : (std::abs(y - cy) <= ry && std::abs(x - cx) <= rx);
          if (in) mask[std::size_t(y * S + x)] = 1;
        }
    }
    std::size_t area = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) area += mask[i];
    const double frac = double(area) / double(S * S);
    ok = frac >= c.fg_min && frac <= c.fg_max;
  }
  require(ok, "synthetic: could not draw geometry within foreground bounds");

  Tensor<float> img(mask.shape());
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      const double base = mask[std::size_t(y * S + x)] ? kFg : kBg;
      double v = 0.5 + st.contrast * (base - 0.5) + st.offset;
      if (st.texture_freq > 0)
        v += st.texture_amp *
             std::sin(2.0 * M_PI * st.texture_freq * double(x + y) / double(S));
      v += st.noise_sigma * rng.normal();
      img[std::size_t(y * S + x)] = float(std::min(1.0, std::max(0.0, v)));
    }
  // store exactly what the 8-bit files will hold
  img = to_unit(quantize_unit(img));
  return {std::move(img), std::move(mask)};
}

std::vector<ManifestItem> gen_synthetic(const SyntheticConfig& c, std::uint64_t seed,
                                        const std::string& out_dir) {
  validate(c);
  const auto styles = c.styles.empty() ? default_styles(c.k) : c.styles;

  struct Planned {
    const char* split;
    int idx;
    int domain;  // 1-based
  };
  std::vector<Planned> plan;
  for (int i = 0; i < c.labeled_count; ++i)
    plan.push_back({"labeled", i, c.labeled_domain});
  for (int i = 0; i < c.unlabeled_count; ++i)
    plan.push_back({"unlabeled", i, 1 + (i % c.k)});
  for (int d = 1; d <= c.k; ++d)
    for (int i = 0; i < c.test_per_domain; ++i)
      plan.push_back({"test", (d - 1) * c.test_per_domain + i, d});

  std::vector<ManifestItem> rel;
  std::vector<double> mean_sum(std::size_t(c.k), 0.0);
  std::vector<std::size_t> mean_cnt(std::size_t(c.k), 0);

  for (std::size_t item = 0; item < plan.size(); ++item) {
    const Planned& p = plan[item];
    Rng rng = Rng::keyed(seed, {rng_stream::kDataGen, item});
    RenderedItem r = render_item(c, p.domain - 1, rng);

    const std::string img_rel = "images/" + item_name(p.split, p.idx);
    write_pgm(out_dir + "/" + img_rel, quantize_unit(r.image));
    ManifestItem m;
    m.image = img_rel;
    m.split = p.split;
    m.domain = p.domain;
    if (std::string(p.split) != "unlabeled") {
      const std::string mask_rel = "masks/" + item_name(p.split, p.idx);
      write_pgm(out_dir + "/" + mask_rel, r.mask);
      m.mask = mask_rel;
    }
    rel.push_back(std::move(m));

    double s = 0;
    for (std::size_t i = 0; i < r.image.size(); ++i) s += double(r.image[i]);
    mean_sum[std::size_t(p.domain - 1)] += s / double(r.image.size());
    mean_cnt[std::size_t(p.domain - 1)] += 1;
  }

  // the configured domain gap must actually exist in the generated pixels;
  // tiny per-domain samples make the mean estimate meaningless, so skip those
  const std::size_t min_cnt =
      *std::min_element(mean_cnt.begin(), mean_cnt.end());
  for (int i = 0; min_cnt >= 8 && i < c.k; ++i)
    for (int j = i + 1; j < c.k; ++j) {
      const double mi = mean_sum[std::size_t(i)] / double(mean_cnt[std::size_t(i)]);
      const double mj = mean_sum[std::size_t(j)] / double(mean_cnt[std::size_t(j)]);
      const double want =
          std::abs(styles[std::size_t(i)].offset - styles[std::size_t(j)].offset);
      require(std::abs(mi - mj) >= want,
              "synthetic: domain mean gap " + std::to_string(std::abs(mi - mj)) +
                  " below configured offset gap " + std::to_string(want) +
                  " for domains " + std::to_string(i + 1) + "," +
                  std::to_string(j + 1));
    }

  const std::string manifest_path = out_dir + "/manifest.jsonl";
  write_manifest(manifest_path, rel);
  return read_manifest(manifest_path);
}

}  // namespace mdseg
