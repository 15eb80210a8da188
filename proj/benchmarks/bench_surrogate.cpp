#include <benchmark/benchmark.h>

#include "torsion/rng.hpp"
#include "torsion/surrogate.hpp"

using namespace torsion;

namespace {
Tensor<float> random_input(int side) {
    Rng rng(99);
    Tensor<float> t(1, side, side);
    for (auto& v : t.v) v = rng.bernoulli(0.5) ? 1.f : 0.f;
    return t;
}
} // namespace

static void BM_DeskForward(benchmark::State& state) {
    CnnModel<float> m = build_architecture("desk", 64);
    m.init_he(1);
    Tensor<float> x = random_input(64);
    for (auto _ : state) benchmark::DoNotOptimize(m.forward(x));
}
BENCHMARK(BM_DeskForward)->Unit(benchmark::kMillisecond);

static void BM_DeskForwardBackward(benchmark::State& state) {
    CnnModel<float> m = build_architecture("desk", 64);
    m.init_he(1);
    m.set_dropout_rate(0.5);
    Tensor<float> x = random_input(64);
    std::vector<float> grads(m.param_count());
    Rng rng(7);
    for (auto _ : state) {
        ForwardTrace<float> trace;
        float pred = m.forward_all(x, Mode::Train, &rng, &trace).v[0];
        std::fill(grads.begin(), grads.end(), 0.f);
        m.backward(trace, 2 * (pred - 0.3f), grads);
        benchmark::DoNotOptimize(grads.data());
    }
}
BENCHMARK(BM_DeskForwardBackward)->Unit(benchmark::kMillisecond);
