#include <benchmark/benchmark.h>

#include <random>

#include "umc/ablation.hpp"
#include "umc/backbone.hpp"
#include "umc/dataset.hpp"
#include "umc/ops.hpp"
#include "umc/train.hpp"
#include "umc/worldgen.hpp"

namespace umc {
namespace {

Tensor random_tensor(const Shape& shape, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    Tensor t(shape);
    for (std::size_t i = 0; i < t.numel(); ++i) {
        t[i] = normal(rng);
    }
    return t;
}

void BM_Matmul(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const Tensor a = random_tensor(Shape{16, n, 64}, 1);
    const Tensor b = random_tensor(Shape{64, 64}, 2);
    for (auto _ : state) {
        Graph<float> g(false);
        benchmark::DoNotOptimize(ops::matmul(g.constant(a), g.constant(b)).value().data());
    }
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(24);

void BM_SelSoftmaxRow(benchmark::State& state) {
    const std::vector<SelectionStrategy> strategies{SelectionStrategy::full(), SelectionStrategy::top_k(8),
                                                    SelectionStrategy::top_p(0.2), SelectionStrategy::top_pk(0.2, 8)};
    const SelectionStrategy st = strategies[static_cast<std::size_t>(state.range(0))];
    std::mt19937_64 rng(3);
    std::normal_distribution<double> normal(0.0, 2.0);
    std::vector<double> s(32);
    for (double& v : s) {
        v = normal(rng);
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(sel_softmax(s, st).data());
    }
    state.SetLabel(to_string(st.kind));
}
BENCHMARK(BM_SelSoftmaxRow)->DenseRange(0, 3);

void BM_RenderScene(benchmark::State& state) {
    std::uint64_t seed = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(render_scene(spec_from_seed(++seed)).pixels.data());
    }
}
BENCHMARK(BM_RenderScene);

// One training step (forward and backward) of the default model on a 16-sample batch.
void BM_TrainStep(benchmark::State& state) {
    RunConfig base;
    const auto cells = ablation_grid("umc-vs-baseline", base);
    const RunConfig& config = cells[static_cast<std::size_t>(state.range(0))].config;
    const DiTConfig model = config.model();
    const Dataset data = synthesize_dataset(1, 96);
    const ParameterStore<float> params = initialize_parameters(declare_model(model), 1);
    long step = 0;
    for (auto _ : state) {
        const Batch batch = draw_batch(data, config.batch_size, 1, ++step);
        benchmark::DoNotOptimize(
            compute_step(params, data, batch, model, [](const std::string&) { return true; }).loss);
    }
    state.SetLabel(cells[static_cast<std::size_t>(state.range(0))].id);
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_EulerSample(benchmark::State& state) {
    const DiTConfig model = RunConfig{}.model();
    const ParameterStore<float> params = initialize_parameters(declare_model(model), 1);
    const SceneSpec spec = spec_from_seed(5);
    SampleRequest req;
    req.prompts = {make_prompt(spec)};
    req.garments = image_to_tensor(render_garment(spec)).reshaped(Shape{1, kGarmentSize, kGarmentSize, 3});
    req.bucket = AspectRatio::TwoThree;
    req.seeds = {7};
    for (auto _ : state) {
        benchmark::DoNotOptimize(euler_sample(params, model, req, static_cast<int>(state.range(0))).data());
    }
}
BENCHMARK(BM_EulerSample)->Arg(32)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace umc

BENCHMARK_MAIN();
