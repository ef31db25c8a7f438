#include <benchmark/benchmark.h>

#include "strokeseg/models.hpp"
#include "strokeseg/training.hpp"

using namespace strokeseg;

namespace {

models::SegmenterConfig bench_config(int scale) {
    models::SegmenterConfig cfg;
    cfg.encoder_widths = {64 / scale, 128 / scale, 256 / scale, 256 / scale,
                          512 / scale, 512 / scale, 512 / scale, 512 / scale};
    return cfg;
}

void BM_SegmenterForward(benchmark::State& state) {
    models::Segmenter seg(bench_config(static_cast<int>(state.range(0))), 1);
    Rng rng(2);
    const Tensor x = normal_tensor<float>({1, 3, 96, 96}, 0.0f, 1.0f, rng);
    for (auto _ : state) benchmark::DoNotOptimize(seg.forward(x, false, false));
}

void BM_SegmenterTrainStep(benchmark::State& state) {
    training::TrainConfig cfg;
    cfg.ablation = training::Ablation::BL5;
    cfg.model = bench_config(static_cast<int>(state.range(0)));
    cfg.batch_size = 1;
    cfg.checkpoint_dir = std::filesystem::temp_directory_path() / "strokeseg_bench_ck";
    training::AdversarialModels m = training::AdversarialModels::build(cfg);

    const auto slices = data::extract_slices(data::synth_case(1, {1, 96, 96}));
    const training::Batch batch = training::collate({&slices[0]});
    for (auto _ : state) benchmark::DoNotOptimize(training::train_step(m, batch, cfg));
}

void BM_DiscriminatorForward(benchmark::State& state) {
    models::DiscriminatorConfig dc;
    dc.in_channels = 4;
    dc.base_width = static_cast<int>(state.range(0));
    models::Discriminator d(dc, 3, "core");
    Rng rng(4);
    const Tensor x = normal_tensor<float>({1, 4, 96, 96}, 0.0f, 1.0f, rng);
    for (auto _ : state) benchmark::DoNotOptimize(d.forward(x, false, false));
}

}  // namespace

BENCHMARK(BM_SegmenterForward)->Arg(8)->Arg(4)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SegmenterTrainStep)->Arg(8)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_DiscriminatorForward)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);
