#include <benchmark/benchmark.h>

#include "metastruct/datagen.hpp"
#include "metastruct/label_synthesis.hpp"
#include "metastruct/losses.hpp"
#include "metastruct/metastructure.hpp"
#include "metastruct/metrics.hpp"
#include "metastruct/segnet.hpp"

using namespace metastruct;

static void BM_Forward(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const ModelParams params = init_params(default_architecture(), 1);
  const Image img = gen_blobs(side, side, 5 * (side / 64) * (side / 64), 2).image;
  for (auto _ : state) benchmark::DoNotOptimize(forward(params, img));
  state.SetItemsProcessed(state.iterations() * side * side);
}
BENCHMARK(BM_Forward)->Arg(64)->Arg(128)->Arg(256);

static void BM_ForwardBackward(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const ModelParams params = init_params(default_architecture(), 1);
  const auto smp = gen_blobs(side, side, 5 * (side / 64) * (side / 64), 2);
  for (auto _ : state) {
    const ForwardCache cache = forward_cached(params, smp.image);
    benchmark::DoNotOptimize(backward(params, cache, bce_loss(cache.output, smp.mask).grad));
  }
  state.SetItemsProcessed(state.iterations() * side * side);
}
BENCHMARK(BM_ForwardBackward)->Arg(64)->Arg(128);

static void BM_KdeDensity(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const LabelMask m = random_flip(gen_circle_rectangle(side), 0.3, 1);
  for (auto _ : state) benchmark::DoNotOptimize(kde_density(m, 1, side / 32));
  state.SetItemsProcessed(state.iterations() * side * side);
}
BENCHMARK(BM_KdeDensity)->Arg(256)->Arg(1024);

static void BM_ClassCount(benchmark::State& state) {
  const LabelMask cl = gen_circle_rectangle(256);
  const LabelMask noisy = random_flip(cl, 0.3, 1);
  for (auto _ : state) benchmark::DoNotOptimize(estimate_class_count(noisy, cl, 1, 8));
}
BENCHMARK(BM_ClassCount);

static void BM_Skeletonize(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const LabelMask m = gen_blobs(side, side, 5 * (side / 64) * (side / 64), 3).mask;
  for (auto _ : state) benchmark::DoNotOptimize(skeletonize(m));
  state.SetItemsProcessed(state.iterations() * side * side);
}
BENCHMARK(BM_Skeletonize)->Arg(64)->Arg(256);

static void BM_Otsu(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const Image img = gen_curvilinear(side, side, 3 * side / 64, 4).image;
  for (auto _ : state) benchmark::DoNotOptimize(otsu(img));
  state.SetItemsProcessed(state.iterations() * side * side);
}
BENCHMARK(BM_Otsu)->Arg(64)->Arg(512);

static void BM_AdaptiveThreshold(benchmark::State& state) {
  const Image img = gen_curvilinear(256, 256, 12, 4).image;
  for (auto _ : state) benchmark::DoNotOptimize(adaptive_gaussian_threshold(img, 15, 0.02));
}
BENCHMARK(BM_AdaptiveThreshold);

BENCHMARK_MAIN();
