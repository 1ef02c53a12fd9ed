#include <benchmark/benchmark.h>

#include "spcl/augment.hpp"
#include "spcl/metrics.hpp"
#include "spcl/model.hpp"
#include "spcl/rng.hpp"
#include "spcl/stores.hpp"

namespace {

using namespace spcl;

ModelConfig bench_config() {
    ModelConfig cfg;
    cfg.input_size = 64;
    cfg.in_channels = 1;
    cfg.stage_channels = {8, 16, 32};
    cfg.num_classes = 8;
    return cfg;
}

void BM_ModelForward(benchmark::State& state) {
    const ModelConfig cfg = bench_config();
    Rng rng(1);
    const auto params = ModelParams<float>::initialized(cfg, rng, 0.3);
    Model<float> model(cfg);
    TensorF img({cfg.input_size, cfg.input_size, 1});
    for (auto& v : img.v) v = static_cast<float>(rng.uniform01());
    ModelWorkspace<float> ws;
    SpatialScoreMap<float> map;
    Prediction<float> pred;
    for (auto _ : state) {
        model.forward(img, params, ws, map, pred);
        benchmark::DoNotOptimize(pred.probabilities.data());
    }
}
BENCHMARK(BM_ModelForward);

void BM_ModelBackward(benchmark::State& state) {
    const ModelConfig cfg = bench_config();
    Rng rng(2);
    const auto params = ModelParams<float>::initialized(cfg, rng, 0.3);
    Model<float> model(cfg);
    TensorF img({cfg.input_size, cfg.input_size, 1});
    for (auto& v : img.v) v = static_cast<float>(rng.uniform01());
    ModelWorkspace<float> ws;
    SpatialScoreMap<float> map;
    Prediction<float> pred;
    model.forward(img, params, ws, map, pred);
    TensorF d_logits({cfg.map_size(), cfg.map_size(), cfg.num_classes}, 0.01f);
    auto grads = ModelParams<float>::zeros_like(params);
    for (auto _ : state) {
        model.backward(params, ws, d_logits, grads);
        benchmark::DoNotOptimize(grads.head_w.v.data());
    }
}
BENCHMARK(BM_ModelBackward);

void BM_BilinearResize(benchmark::State& state) {
    Rng rng(3);
    TensorF img({96, 96, 1});
    for (auto& v : img.v) v = static_cast<float>(rng.uniform01());
    for (auto _ : state) {
        auto out = bilinear_resize(img, 64, 64);
        benchmark::DoNotOptimize(out.v.data());
    }
}
BENCHMARK(BM_BilinearResize);

void BM_HeatmapUpdate(benchmark::State& state) {
    Rng rng(4);
    const int64_t w = 16, g = 8, l = 8;
    std::vector<AnnotationVector> anns(1);
    anns[0].z.assign(static_cast<size_t>(l), Label::Unknown);
    anns[0].z[0] = Label::Positive;
    HeatmapStore store(1, w, l, 0.8f);
    store.init_from_annotations(anns);
    AugmentConfig aug;
    TensorF f({g, g, l});
    for (auto& v : f.v) v = static_cast<float>(rng.uniform01());
    for (auto _ : state) {
        store.update(0, f, sample_transform(rng, aug));
    }
}
BENCHMARK(BM_HeatmapUpdate);

void BM_AveragePrecision(benchmark::State& state) {
    Rng rng(5);
    const int64_t n = state.range(0);
    std::vector<double> scores(static_cast<size_t>(n));
    std::vector<uint8_t> labels(static_cast<size_t>(n), 0);
    for (auto& s : scores) s = rng.uniform01();
    for (auto& l : labels) l = rng.bernoulli(0.2);
    labels[0] = 1;
    for (auto _ : state) {
        benchmark::DoNotOptimize(average_precision(scores, labels));
    }
}
BENCHMARK(BM_AveragePrecision)->Arg(400)->Arg(2000);

}  // namespace

int main(int argc, char** argv) {
    benchmark::Initialize(&argc, argv);
    if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
    benchmark::RunSpecifiedBenchmarks();
    return 0;
}
