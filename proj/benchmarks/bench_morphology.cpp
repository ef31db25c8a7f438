#include <benchmark/benchmark.h>

#include "strokeseg/morphology.hpp"
#include "strokeseg/tensor.hpp"

using namespace strokeseg;

namespace {

ByteTensor disk_mask(int size) {
    ByteTensor m({size, size});
    const double c = size / 2.0, r = size / 3.0;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            m.at(y, x) = ((y - c) * (y - c) + (x - c) * (x - c)) <= r * r;
    return m;
}

void BM_Dilate(benchmark::State& state) {
    const ByteTensor m = disk_mask(static_cast<int>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(morphology::dilate(m));
    state.SetComplexityN(state.range(0));
}

void BM_BoundaryBand(benchmark::State& state) {
    const ByteTensor m = disk_mask(static_cast<int>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(morphology::boundary_band(m));
}

void BM_WeightMap(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const ByteTensor pen = disk_mask(n);
    IntTensor labels({n, n});
    for (std::int64_t i = 0; i < labels.numel(); ++i) labels[i] = pen[i];
    for (auto _ : state) benchmark::DoNotOptimize(morphology::weight_map(labels));
}

}  // namespace

BENCHMARK(BM_Dilate)->RangeMultiplier(2)->Range(64, 256)->Complexity();
BENCHMARK(BM_BoundaryBand)->Arg(96)->Arg(192);
BENCHMARK(BM_WeightMap)->Arg(96)->Arg(192);
