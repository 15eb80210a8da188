#include <benchmark/benchmark.h>

#include "torsion/raster.hpp"

using namespace torsion;

static void BM_Rasterize(benchmark::State& state) {
    GenConfig cfg;
    cfg.seed = 12;
    cfg.count = 1;
    Domain d = random_domain(cfg, 0);
    int n = int(state.range(0));
    for (auto _ : state) {
        BinaryImage img = rasterize(d, n);
        benchmark::DoNotOptimize(img.bits.data());
    }
}
BENCHMARK(BM_Rasterize)->Arg(256)->Arg(677)->Unit(benchmark::kMillisecond);

static void BM_Downscale(benchmark::State& state) {
    Domain d = disk(1.0, {0, 0}, 256);
    BinaryImage img = rasterize(d, 256);
    for (auto _ : state) {
        GrayImage g = downscale(img, 64);
        benchmark::DoNotOptimize(g.v.data());
    }
}
BENCHMARK(BM_Downscale)->Unit(benchmark::kMicrosecond);
