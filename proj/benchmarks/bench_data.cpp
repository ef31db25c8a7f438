#include <benchmark/benchmark.h>

#include "strokeseg/data.hpp"

using namespace strokeseg;

namespace {

void BM_SynthCase(benchmark::State& state) {
    const int side = static_cast<int>(state.range(0));
    std::uint64_t seed = 0;
    for (auto _ : state) benchmark::DoNotOptimize(data::synth_case(seed++, {2, side, side}));
}

void BM_ExtractSlices(benchmark::State& state) {
    const data::Case c = data::synth_case(1, {4, static_cast<int>(state.range(0)),
                                              static_cast<int>(state.range(0))});
    for (auto _ : state) benchmark::DoNotOptimize(data::extract_slices(c));
}

void BM_NormalizeModality(benchmark::State& state) {
    const data::Case c = data::synth_case(2, {4, 96, 96});
    const data::Volume& v = c.modalities.at(data::Modality::DWI);
    for (auto _ : state) benchmark::DoNotOptimize(data::normalize_modality(v));
}

}  // namespace

BENCHMARK(BM_SynthCase)->Arg(64)->Arg(96)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ExtractSlices)->Arg(64)->Arg(96)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_NormalizeModality);
