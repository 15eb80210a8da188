#include <benchmark/benchmark.h>

#include "torsion/fem.hpp"

using namespace torsion;

static void BM_TriangulateDisk(benchmark::State& state) {
    Domain d = disk(1.0, {0, 0}, 512);
    double h = 1.0 / double(state.range(0));
    for (auto _ : state) {
        TriMesh m = triangulate(d, h);
        benchmark::DoNotOptimize(m.triangles.data());
    }
}
BENCHMARK(BM_TriangulateDisk)->Arg(20)->Arg(50)->Unit(benchmark::kMillisecond);

static void BM_ComputeTorsionDisk(benchmark::State& state) {
    Domain d = disk(1.0, {0, 0}, 512);
    double h = 1.0 / double(state.range(0));
    for (auto _ : state) {
        FemSolution s = compute_torsion(d, h);
        benchmark::DoNotOptimize(s.torsion_value);
    }
}
BENCHMARK(BM_ComputeTorsionDisk)->Arg(20)->Arg(50)->Unit(benchmark::kMillisecond);

static void BM_CgSolveDisk(benchmark::State& state) {
    Domain d = disk(1.0, {0, 0}, 512);
    TriMesh m = triangulate(d, 0.02);
    SparseSystem sys = assemble(m);
    for (auto _ : state) {
        CgResult r = solve(sys, 1e-10);
        benchmark::DoNotOptimize(r.x.data());
    }
}
BENCHMARK(BM_CgSolveDisk)->Unit(benchmark::kMillisecond);
