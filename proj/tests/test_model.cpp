#include "evt/model.hpp"
#include "evt/synthetic.hpp"

#include "support/oracles.hpp"

#include <doctest.h>

#include <cstdio>
#include <random>

using namespace evt;

namespace {

ModelConfig small_config() {
    ModelConfig cfg;
    cfg.input_h = 32;
    cfg.input_w = 32;
    cfg.embed_dim = 32;
    cfg.heads = 4;
    cfg.queue_len = 12;
    cfg.num_classes = 4;
    cfg.ffn_dim = 48;
    cfg.backbone = {{6, 2}, {10, 2}};
    return cfg;
}

// untrained models have a zero head; nudge weights so outputs depend on input
ModelParams nontrivial_model(uint64_t seed) {
    auto m = init_model<float>(small_config(), seed);
    std::mt19937_64 rng(seed + 1);
    std::uniform_real_distribution<float> dist(-0.3f, 0.3f);
    for (auto& v : m.store.entry("head.W").value.data) v = dist(rng);
    for (auto& v : m.store.entry("head.b").value.data) v = dist(rng);
    return m;
}

std::vector<std::vector<float>> random_embeddings(int count, int dim, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    std::vector<std::vector<float>> out(static_cast<std::size_t>(count),
                                        std::vector<float>(static_cast<std::size_t>(dim)));
    for (auto& e : out)
        for (auto& v : e) v = dist(rng);
    return out;
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

} // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("config invariants are enforced") {
    ModelConfig cfg = small_config();
    cfg.embed_dim = 30; // not divisible by 4 heads
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = small_config();
    cfg.queue_len = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = small_config();
    cfg.num_classes = 1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("extract_features is deterministic and size-checked") {
    const auto m = nontrivial_model(3);
    const auto surf = random_surface(32, 32, 10);
    const auto a = extract_features(surf, m);
    const auto b = extract_features(surf, m);
    CHECK(a == b);
    CHECK(int(a.size()) == m.config.embed_dim);

    const auto zero = TimeSurface{0, 32, 32, std::vector<double>(1024, 0.0)};
    const auto za = extract_features(zero, m);
    CHECK(za == extract_features(zero, m));

    CHECK_THROWS_AS(extract_features(random_surface(16, 32, 1), m), DimensionError);
}

TEST_CASE("embedding of one surface ignores every other surface") {
    const auto m = nontrivial_model(4);
    RunStats stats;
    const auto s1 = random_surface(32, 32, 21);
    const auto s2 = random_surface(32, 32, 22);
    const auto e1 = extract_features(s1, m, &stats);
    // feed other surfaces through in between; s1's embedding must not move
    extract_features(s2, m, &stats);
    extract_features(random_surface(32, 32, 23), m, &stats);
    CHECK(extract_features(s1, m, &stats) == e1);
    CHECK(stats.backbone_forwards == 4);
}

TEST_CASE("push_and_predict: first push attends to itself with weight 1") {
    const auto m = nontrivial_model(5);
    OnlineState state(m.config);
    const auto step = push_and_predict(state, random_embeddings(1, 32, 7)[0], m);
    REQUIRE(step.attention.shape == nn::Shape{4, 1, 1});
    for (int h = 0; h < 4; ++h) CHECK(step.attention.data[h] == 1.0f);
    CHECK(state.size() == 1);
    CHECK(state.steps_seen() == 1);
}

TEST_CASE("confidences are normalized and repeat-push well-defined") {
    const auto m = init_model<float>(small_config(), 6); // zero head: uniform output
    OnlineState state(m.config);
    const auto emb = random_embeddings(1, 32, 8)[0];
    push_and_predict(state, emb, m);
    const auto step = push_and_predict(state, emb, m);
    double sum = 0;
    for (float v : step.confidence) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    for (float v : step.confidence) CHECK(v == doctest::Approx(0.25).epsilon(1e-6));
}

TEST_CASE("embedding dimension mismatch is rejected") {
    const auto m = nontrivial_model(9);
    OnlineState state(m.config);
    CHECK_THROWS_AS(push_and_predict(state, std::vector<float>(16, 0.0f), m), DimensionError);
}

TEST_CASE("online equals offline at every step") {
    const auto m = nontrivial_model(11);
    const auto embs = random_embeddings(10, 32, 33);
    OnlineState state(m.config);
    const auto offline = predict_offline(embs, m);
    REQUIRE(offline.size() == 10);
    for (std::size_t k = 0; k < embs.size(); ++k) {
        const auto step = push_and_predict(state, embs[k], m);
        for (int c = 0; c < m.config.num_classes; ++c)
            CHECK(std::abs(step.confidence[c] - offline[k].confidence[c]) <= 1e-5);
        // attention blocks agree too
        REQUIRE(step.attention.shape == offline[k].attention.shape);
        for (std::size_t i = 0; i < step.attention.data.size(); ++i)
            CHECK(step.attention.data[i] ==
                  doctest::Approx(offline[k].attention.data[i]).epsilon(1e-6));
    }
}

TEST_CASE("predict_offline causality: zeroing the future changes nothing past") {
    const auto m = nontrivial_model(13);
    auto embs = random_embeddings(8, 32, 44);
    const auto base = predict_offline(embs, m);
    for (int k : {2, 5}) {
        auto mutated = embs;
        for (std::size_t j = std::size_t(k) + 1; j < mutated.size(); ++j)
            std::fill(mutated[j].begin(), mutated[j].end(), 0.0f);
        const auto out = predict_offline(mutated, m);
        for (int s = 0; s <= k; ++s)
            for (int c = 0; c < m.config.num_classes; ++c)
                CHECK(out[s].confidence[c] == base[s].confidence[c]); // bit-identical
    }
}

TEST_CASE("order sensitivity: reversing embeddings changes the last step") {
    const auto m = nontrivial_model(17);
    auto embs = random_embeddings(6, 32, 55);
    const auto fwd = predict_offline(embs, m);
    std::reverse(embs.begin(), embs.end());
    const auto rev = predict_offline(embs, m);
    bool differs = false;
    for (int c = 0; c < m.config.num_classes; ++c)
        if (std::abs(fwd.back().confidence[c] - rev.back().confidence[c]) > 1e-7) differs = true;
    CHECK(differs);
}

TEST_CASE("sequence longer than queue_len is rejected; sliding window after overflow") {
    const auto m = nontrivial_model(19);
    const int Q = m.config.queue_len;
    CHECK_THROWS_AS(predict_offline(random_embeddings(Q + 1, 32, 1), m), DimensionError);

    const auto embs = random_embeddings(Q + 5, 32, 66);
    OnlineState state(m.config);
    StepPrediction last;
    for (const auto& e : embs) last = push_and_predict(state, e, m);
    CHECK(state.size() == std::size_t(Q));
    // prediction equals offline over the latest queue_len embeddings
    const std::vector<std::vector<float>> window(embs.end() - Q, embs.end());
    const auto offline = predict_offline(window, m);
    for (int c = 0; c < m.config.num_classes; ++c)
        CHECK(std::abs(last.confidence[c] - offline.back().confidence[c]) <= 1e-5);
}

TEST_CASE("reset_state restores a fresh queue") {
    const auto m = nontrivial_model(23);
    OnlineState state(m.config);
    const auto embs = random_embeddings(5, 32, 77);
    for (const auto& e : embs) push_and_predict(state, e, m);
    reset_state(state);
    CHECK(state.size() == 0);
    CHECK(state.steps_seen() == 0);
    const auto after = push_and_predict(state, embs[0], m);
    OnlineState fresh(m.config);
    const auto want = push_and_predict(fresh, embs[0], m);
    CHECK(after.confidence == want.confidence);
    reset_state(state);
    reset_state(state); // idempotent
    CHECK(state.size() == 0);
}

TEST_CASE("run_stream produces one entry per surface and extracts once each") {
    const auto m = nontrivial_model(29);
    MotionScript script;
    script.pattern = MotionPattern::cyclic_horizontal;
    script.duration_s = 2.0;
    script.rate = 4000;
    script.seed = 17;
    const auto stream = generate_synthetic(script, 64, 64);

    PipelineConfig cfg;
    cfg.decay.cadence_us = 33000;
    cfg.decay.tau_us = 33000;

    RunStats stats;
    const auto trace = run_stream(stream, m, cfg, &stats);
    CHECK(trace.steps.size() == 60); // 2 s at 33 ms
    CHECK(stats.backbone_forwards == 60);
    CHECK(stats.surfaces_built == 60);
    CHECK(trace.steps.front().t_ref_us == 33000);
    for (const auto& step : trace.steps) {
        double sum = 0;
        for (float v : step.confidence) sum += v;
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("run_stream on an empty stream with an explicit horizon") {
    const auto m = nontrivial_model(31);
    EventStream empty;
    empty.sensor_width = 64;
    empty.sensor_height = 64;
    PipelineConfig cfg;
    cfg.horizon = 60;
    const auto trace = run_stream(empty, m, cfg);
    CHECK(trace.steps.size() == 60);
}

TEST_CASE("exported attention is lower-triangular and row-stochastic") {
    const auto m = nontrivial_model(37);
    const auto embs = random_embeddings(9, 32, 88);
    OnlineState state(m.config);
    PredictionTrace trace;
    trace.num_classes = m.config.num_classes;
    trace.heads = m.config.heads;
    for (const auto& e : embs) {
        auto step = push_and_predict(state, e, m);
        trace.steps.push_back({0, step.confidence, step.predicted, step.attention});
    }
    for (int h = 0; h < m.config.heads; ++h) {
        const auto rec = export_attention(trace, h);
        const int L = rec.matrix.shape[0];
        REQUIRE(L == 9);
        for (int i = 0; i < L; ++i) {
            double sum = 0;
            for (int j = 0; j < L; ++j) {
                if (j > i) CHECK(rec.matrix.at(i, j) == 0.0f);
                sum += rec.matrix.at(i, j);
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
    CHECK_THROWS_AS(export_attention(trace, m.config.heads), ConfigError);
}

TEST_CASE("ATT1 and trace CSV round-trips") {
    const auto m = nontrivial_model(41);
    const auto embs = random_embeddings(5, 32, 99);
    OnlineState state(m.config);
    PredictionTrace trace;
    trace.num_classes = m.config.num_classes;
    trace.heads = m.config.heads;
    uint64_t t = 0;
    for (const auto& e : embs) {
        auto step = push_and_predict(state, e, m);
        t += 33000;
        trace.steps.push_back({t, step.confidence, step.predicted, step.attention});
    }

    SUBCASE("attention records") {
        const auto rec = export_attention(trace, 2);
        const auto bytes = encode_attention(rec);
        std::size_t off = 0;
        const auto back = decode_attention(bytes, off);
        CHECK(off == bytes.size());
        CHECK(back.step == rec.step);
        CHECK(back.head == rec.head);
        CHECK(back.matrix.shape == rec.matrix.shape);
        CHECK(back.matrix.data == rec.matrix.data); // f32 both sides: exact
    }
    SUBCASE("attention file holds steps x heads records") {
        const std::string path = "test_attn.att";
        write_attention_file(path, trace);
        const auto recs = read_attention_file(path);
        CHECK(recs.size() == trace.steps.size() * std::size_t(trace.heads));
        std::remove(path.c_str());
    }
    SUBCASE("trace csv") {
        const std::string path = "test_trace.csv";
        write_trace_csv(path, trace);
        const auto back = read_trace_csv(path);
        REQUIRE(back.steps.size() == trace.steps.size());
        CHECK(back.num_classes == trace.num_classes);
        for (std::size_t i = 0; i < trace.steps.size(); ++i) {
            CHECK(back.steps[i].t_ref_us == trace.steps[i].t_ref_us);
            CHECK(back.steps[i].predicted == trace.steps[i].predicted);
            for (int c = 0; c < trace.num_classes; ++c)
                CHECK(back.steps[i].confidence[c] ==
                      doctest::Approx(trace.steps[i].confidence[c]).epsilon(1e-6));
        }
        std::remove(path.c_str());
    }
}

TEST_CASE("model checkpoints round-trip with their configuration") {
    const auto m = nontrivial_model(43);
    const std::string path = "test_model.nnp1";
    save_model(path, m);
    const auto back = load_model(path);
    CHECK(back.config.embed_dim == m.config.embed_dim);
    CHECK(back.config.queue_len == m.config.queue_len);
    CHECK(back.config.backbone.size() == m.config.backbone.size());
    REQUIRE(back.store.count() == m.store.count());
    for (int i = 0; i < m.store.count(); ++i) {
        CHECK(back.store.entry(i).name == m.store.entry(i).name);
        CHECK(back.store.entry(i).value.data == m.store.entry(i).value.data);
    }
    // inference agrees bit-for-bit
    const auto surf = random_surface(32, 32, 5);
    CHECK(extract_features(surf, back) == extract_features(surf, m));
    std::remove(path.c_str());
}

TEST_CASE("argmax ties break to the lowest class index") {
    CHECK(argmax_lowest({0.25f, 0.25f, 0.25f, 0.25f}) == 0);
    CHECK(argmax_lowest({0.1f, 0.4f, 0.4f, 0.1f}) == 1);
}

TEST_SUITE_END();
