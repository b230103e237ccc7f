#include <benchmark/benchmark.h>

#include "mdseg/cmmd.hpp"
#include "mdseg/hdbscan.hpp"
#include "mdseg/trainer.hpp"

using namespace mdseg;

namespace {

Tensor<float> random_tensor(Shape s, Rng& rng) {
  Tensor<float> t(std::move(s));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = float(rng.uniform(-1, 1));
  return t;
}

DataSplits tiny_dataset(int size, int labeled, int unlabeled) {
  SyntheticConfig sc;
  sc.image_size = size;
  DataSplits d;
  for (int i = 0; i < labeled; ++i) {
    Rng r = Rng::keyed(7, {rng_stream::kDataGen, std::uint64_t(i)});
    RenderedItem it = render_item(sc, 0, r);
    d.labeled_images.push_back(std::move(it.image));
    d.labeled_masks.push_back(std::move(it.mask));
  }
  for (int i = 0; i < unlabeled; ++i) {
    Rng r = Rng::keyed(7, {rng_stream::kDataGen, std::uint64_t(labeled + i)});
    RenderedItem it = render_item(sc, i % sc.k, r);
    d.unlabeled_images.push_back(std::move(it.image));
    d.unlabeled_domains.push_back(1 + i % sc.k);
  }
  Rng r = Rng::keyed(7, {rng_stream::kDataGen, 9999});
  RenderedItem it = render_item(sc, 0, r);
  d.test_images.push_back(std::move(it.image));
  d.test_masks.push_back(std::move(it.mask));
  d.test_domains.push_back(1);
  return d;
}

void BM_conv2d_forward(benchmark::State& state) {
  const std::size_t hw = std::size_t(state.range(0));
  Rng rng(42);
  Tensor<float> x = random_tensor(Shape{4, 8, hw, hw}, rng);
  Tensor<float> w = random_tensor(Shape{8, 8, 3, 3}, rng);
  Tensor<float> b = random_tensor(Shape{8}, rng);
  for (auto _ : state) {
    Graph<float> g(false);
    auto y = g.conv2d(g.constant(x), g.constant(w), g.constant(b), 1, 1);
    benchmark::DoNotOptimize(g.value(y).data());
  }
}
BENCHMARK(BM_conv2d_forward)->Arg(16)->Arg(32);

void BM_conv2d_backward(benchmark::State& state) {
  const std::size_t hw = std::size_t(state.range(0));
  Rng rng(42);
  Tensor<float> x = random_tensor(Shape{4, 8, hw, hw}, rng);
  Tensor<float> w = random_tensor(Shape{8, 8, 3, 3}, rng);
  Tensor<float> b = random_tensor(Shape{8}, rng);
  for (auto _ : state) {
    Graph<float> g(true);
    auto xv = g.leaf(x, true);
    auto y = g.conv2d(xv, g.leaf(w, true), g.leaf(b, true), 1, 1);
    auto loss = g.mean(y);
    auto grads = g.backward(loss);
    benchmark::DoNotOptimize(grads.at(xv.id).data());
  }
}
BENCHMARK(BM_conv2d_backward)->Arg(16)->Arg(32);

void BM_mmd2_unbiased(benchmark::State& state) {
  const std::size_t n = std::size_t(state.range(0));
  Rng rng(7);
  Tensor<double> x(Shape{n, 16}), y(Shape{n, 16});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.normal();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = rng.normal() + 0.5;
  for (auto _ : state) {
    benchmark::DoNotOptimize(mmd2_unbiased_value(x, y, 1.3));
  }
}
BENCHMARK(BM_mmd2_unbiased)->Arg(32)->Arg(128)->Arg(256);

void BM_hdbscan(benchmark::State& state) {
  const std::size_t n = std::size_t(state.range(0));
  Rng rng(11);
  Tensor<double> pts(Shape{n, 8});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < 8; ++k)
      pts[i * 8 + k] = rng.normal() + double(3 * (i % 3));
  HdbscanConfig cfg;
  for (auto _ : state) {
    benchmark::DoNotOptimize(hdbscan(pts, cfg).q);
  }
}
BENCHMARK(BM_hdbscan)->Arg(64)->Arg(256);

void BM_train_step(benchmark::State& state) {
  TrainConfig cfg;
  cfg.model.base_width = 4;
  cfg.iter_max = 1 << 20;
  DataSplits data = tiny_dataset(int(state.range(0)), 4, 16);
  Trainer t(cfg, Ablation::cpm_cmmd, std::move(data));
  long it = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(t.step(it++).l_total);
  }
}
BENCHMARK(BM_train_step)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
