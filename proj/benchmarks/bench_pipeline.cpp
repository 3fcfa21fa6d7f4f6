#include "evt/model.hpp"
#include "evt/synthetic.hpp"
#include "evt/time_surface.hpp"

#include <benchmark/benchmark.h>

#include <random>

namespace {

using namespace evt;

EventStream bench_stream() {
    MotionScript script;
    script.pattern = MotionPattern::cyclic_horizontal;
    script.duration_s = 2.0;
    script.rate = 50000;
    script.seed = 1;
    return generate_synthetic(script, 240, 180);
}

TimeSurface random_surface(int h, int w, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    TimeSurface s;
    s.height = uint16_t(h);
    s.width = uint16_t(w);
    s.values.resize(std::size_t(h) * w);
    for (auto& v : s.values) v = dist(rng);
    return s;
}

ModelParams default_model() { return init_model<float>(ModelConfig{}, 3); }

void BM_FilterIsolated(benchmark::State& state) {
    const auto stream = bench_stream();
    FilterConfig cfg;
    for (auto _ : state) {
        auto out = filter_isolated(stream, cfg);
        benchmark::DoNotOptimize(out);
    }
    state.SetItemsProcessed(int64_t(state.iterations()) * int64_t(stream.events.size()));
}
BENCHMARK(BM_FilterIsolated)->Unit(benchmark::kMillisecond);

void BM_BuildTimeSurface(benchmark::State& state) {
    const auto stream = bench_stream();
    DecayConfig cfg;
    cfg.mode = state.range(0) ? SurfaceMode::decayed_sum : SurfaceMode::latest_event;
    for (auto _ : state) {
        auto s = build_time_surface(stream, 1000000, cfg);
        benchmark::DoNotOptimize(s);
    }
}
BENCHMARK(BM_BuildTimeSurface)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_ResizeSurface(benchmark::State& state) {
    const auto s = random_surface(180, 240, 2);
    for (auto _ : state) {
        auto out = resize_surface(s, 144, 144);
        benchmark::DoNotOptimize(out);
    }
}
BENCHMARK(BM_ResizeSurface)->Unit(benchmark::kMillisecond);

void BM_ExtractFeatures(benchmark::State& state) {
    const auto params = default_model();
    const auto s = random_surface(144, 144, 3);
    for (auto _ : state) {
        auto emb = extract_features(s, params);
        benchmark::DoNotOptimize(emb);
    }
}
BENCHMARK(BM_ExtractFeatures)->Unit(benchmark::kMillisecond);

// encoder + head cost at a fixed queue fill (one timed push per iteration)
void BM_PushAndPredict(benchmark::State& state) {
    const auto params = default_model();
    const std::size_t fill = std::size_t(state.range(0));
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    std::vector<float> emb(std::size_t(params.config.embed_dim));
    for (auto& v : emb) v = dist(rng);

    for (auto _ : state) {
        state.PauseTiming();
        OnlineState q(params.config);
        for (std::size_t i = 0; i + 1 < fill; ++i) push_and_predict(q, emb, params);
        state.ResumeTiming();
        auto step = push_and_predict(q, emb, params);
        benchmark::DoNotOptimize(step);
    }
}
BENCHMARK(BM_PushAndPredict)->Arg(1)->Arg(15)->Arg(30)->Arg(60)->Unit(benchmark::kMillisecond);

void BM_FullPipelineStep(benchmark::State& state) {
    const auto params = default_model();
    const auto s = random_surface(180, 240, 5);
    OnlineState q(params.config);
    // steady state: queue at capacity before timing starts
    for (int i = 0; i < params.config.queue_len; ++i)
        push_and_predict(q, extract_features(resize_surface(s, 144, 144), params), params);
    for (auto _ : state) {
        const auto resized = resize_surface(s, 144, 144);
        auto step = push_and_predict(q, extract_features(resized, params), params);
        benchmark::DoNotOptimize(step);
    }
    state.SetItemsProcessed(state.iterations()); // time surfaces per second
}
BENCHMARK(BM_FullPipelineStep)->Unit(benchmark::kMillisecond);

} // namespace
