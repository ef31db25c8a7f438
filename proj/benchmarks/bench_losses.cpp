#include <benchmark/benchmark.h>

#include "strokeseg/losses.hpp"

using namespace strokeseg;

namespace {

struct LossFixture {
    Tensor logits, probs, weights;
    IntTensor labels;

    explicit LossFixture(int side) {
        Rng rng(1);
        logits = normal_tensor<float>({3, side, side}, 0.0f, 2.0f, rng);
        Tensor l4 = logits;
        l4.reshape({1, 3, side, side});
        probs = nn::softmax_channels(l4);
        probs.reshape({3, side, side});
        labels = IntTensor({side, side});
        weights = Tensor({side, side}, 1.0f);
        for (std::int64_t i = 0; i < labels.numel(); ++i) {
            labels[i] = static_cast<std::int32_t>(rng() % 3);
            if (rng() % 8 == 0) weights[i] = 10.0f;
        }
    }
};

void BM_CrossEntropyGrad(benchmark::State& state) {
    LossFixture f(static_cast<int>(state.range(0)));
    Tensor g;
    for (auto _ : state) benchmark::DoNotOptimize(losses::cross_entropy(f.logits, f.labels, &g));
}

void BM_LovaszSoftmaxGrad(benchmark::State& state) {
    LossFixture f(static_cast<int>(state.range(0)));
    Tensor g;
    for (auto _ : state) benchmark::DoNotOptimize(losses::lovasz_softmax(f.probs, f.labels, &g));
}

void BM_BoundaryNllGrad(benchmark::State& state) {
    LossFixture f(static_cast<int>(state.range(0)));
    Tensor g;
    for (auto _ : state)
        benchmark::DoNotOptimize(losses::boundary_nll_logits(f.logits, f.labels, f.weights, &g));
}

void BM_RaganD(benchmark::State& state) {
    Rng rng(2);
    const Tensor real = normal_tensor<float>({16}, 0.0f, 1.0f, rng);
    const Tensor fake = normal_tensor<float>({16}, 0.0f, 1.0f, rng);
    Tensor gr, gf;
    for (auto _ : state) benchmark::DoNotOptimize(losses::ragan_d_loss(real, fake, &gr, &gf));
}

}  // namespace

BENCHMARK(BM_CrossEntropyGrad)->Arg(96)->Arg(192);
BENCHMARK(BM_LovaszSoftmaxGrad)->Arg(96)->Arg(192);
BENCHMARK(BM_BoundaryNllGrad)->Arg(96)->Arg(192);
BENCHMARK(BM_RaganD);
