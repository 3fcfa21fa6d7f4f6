#include "evt/training.hpp"

#include "support/oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>
#include <set>

using namespace evt;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.input_h = 16;
    cfg.input_w = 16;
    cfg.embed_dim = 16;
    cfg.heads = 4;
    cfg.queue_len = 6;
    cfg.num_classes = 4;
    cfg.ffn_dim = 24;
    cfg.backbone = {{4, 2}, {6, 2}};
    return cfg;
}

std::vector<Sample> toy_samples(int per_class, uint64_t seed) {
    std::vector<Sample> out;
    const MotionPattern patterns[4] = {MotionPattern::cyclic_horizontal,
                                       MotionPattern::cyclic_vertical,
                                       MotionPattern::discrete_arc, MotionPattern::discrete_linear};
    const char* subjects[5] = {"S1", "S2", "S3", "S4", "S5"};
    int n = 0;
    for (int c = 0; c < 4; ++c)
        for (int i = 0; i < per_class; ++i, ++n) {
            MotionScript script;
            script.pattern = patterns[c];
            script.duration_s = 0.35;
            script.rate = 3000;
            script.period_s = 0.15;
            script.seed = seed + std::size_t(n) * 131;
            Sample s;
            s.stream = generate_synthetic(script, 32, 32);
            s.label = c;
            s.super_label = is_cyclic(patterns[c]) ? 0 : 1;
            s.subject = subjects[n % 5];
            out.push_back(std::move(s));
        }
    return out;
}

TrainOptions toy_options() {
    TrainOptions opts;
    opts.decay.tau_us = 50000;
    opts.decay.cadence_us = 50000;
    opts.horizon = 6;
    return opts;
}

uint64_t non_head_checksum(const ModelParams& m) {
    uint64_t h = 1469598103934665603ull;
    for (const auto& e : m.store) {
        if (is_head_param(e.name)) continue;
        for (float v : e.value.data) {
            uint32_t bits;
            std::memcpy(&bits, &v, 4);
            h = (h ^ bits) * 1099511628211ull;
        }
    }
    return h;
}

} // namespace

TEST_SUITE_BEGIN("training");

TEST_CASE("make_split: leave-one-subject-out puts the subject only in test") {
    const auto samples = toy_samples(5, 2); // 20 samples over S1..S5
    SplitPlan plan;
    plan.kind = SplitKind::leave_one_subject_out;
    plan.held_out_subject = "S3";
    plan.seed = 7;
    const auto split = make_split(samples, plan);
    std::set<int> train(split.train.begin(), split.train.end());
    std::set<int> val(split.val.begin(), split.val.end());
    std::set<int> test(split.test.begin(), split.test.end());
    CHECK(train.size() + val.size() + test.size() == samples.size());
    for (int i : test) CHECK(samples[i].subject == "S3");
    for (int i : train) CHECK(samples[i].subject != "S3");
    for (int i : val) CHECK(samples[i].subject != "S3");
    // disjoint
    for (int i : train) CHECK(!val.count(i));
    for (int i : train) CHECK(!test.count(i));
    for (int i : val) CHECK(!test.count(i));

    SplitPlan bad = plan;
    bad.held_out_subject = "S9";
    CHECK_THROWS_AS(make_split(samples, bad), ConfigError);
}

TEST_CASE("make_split: kfold partitions with sizes differing by at most 1") {
    const auto samples = toy_samples(5, 3);
    std::vector<std::size_t> fold_sizes;
    std::set<int> seen;
    for (int fold = 0; fold < 4; ++fold) {
        SplitPlan plan;
        plan.kind = SplitKind::kfold;
        plan.k = 4;
        plan.held_out_fold = fold;
        plan.seed = 11;
        const auto split = make_split(samples, plan);
        fold_sizes.push_back(split.test.size());
        for (int i : split.test) {
            CHECK(!seen.count(i)); // folds are disjoint
            seen.insert(i);
        }
    }
    CHECK(seen.size() == samples.size()); // folds cover everything
    const auto [mn, mx] = std::minmax_element(fold_sizes.begin(), fold_sizes.end());
    CHECK(*mx - *mn <= 1);
}

TEST_CASE("make_split is deterministic and warns on missing classes") {
    const auto samples = toy_samples(4, 5);
    SplitPlan plan;
    plan.seed = 13;
    const auto a = make_split(samples, plan);
    const auto b = make_split(samples, plan);
    CHECK(a.train == b.train);
    CHECK(a.val == b.val);
    CHECK(a.test == b.test);

    // single-class pool where train misses a class entirely
    std::vector<Sample> skew(samples.begin(), samples.begin() + 2);
    skew[0].label = 0;
    skew[1].label = 1;
    SplitPlan half;
    half.train_fraction = 0.5;
    half.val_fraction = 0.5;
    half.seed = 1;
    const auto split = make_split(skew, half);
    CHECK((split.warnings.empty() == false));
}

TEST_CASE("schedule files round-trip") {
    Schedule sched;
    sched.stages.push_back({TrainScope::all, 6, 8, 1e-3, LabelSet::super_category});
    sched.stages.push_back({TrainScope::head_only, 4, 8, 1e-3, LabelSet::full});
    sched.stages.push_back({TrainScope::all, 8, 8, 1e-4, LabelSet::full});
    const auto text = format_schedule(sched);
    const auto back = parse_schedule(text);
    REQUIRE(back.stages.size() == 3);
    CHECK(back.stages[0].labels == LabelSet::super_category);
    CHECK(back.stages[1].scope == TrainScope::head_only);
    CHECK(back.stages[2].learning_rate == doctest::Approx(1e-4));

    CHECK_THROWS_AS(parse_schedule("stages = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_schedule("stages = 1\nstage1.scope = what\nstage1.epochs = 1\n"
                                   "stage1.batch_size = 1\nstage1.lr = 0.1\nstage1.labels = full\n"),
                    ConfigError);
}

TEST_CASE("initial loss on C balanced classes sits at ln C") {
    const auto samples = toy_samples(2, 17);
    const auto model = init_model<float>(tiny_config(), 3);
    const auto opts = toy_options();
    Schedule sched;
    sched.stages.push_back({TrainScope::head_only, 1, 4, 1e-9, LabelSet::full});
    const auto result = train_staged(model, samples, samples, sched, 5, opts);
    REQUIRE(result.log.size() == 1);
    CHECK(result.log[0].train_loss == doctest::Approx(std::log(4.0)).epsilon(0.10));
}

TEST_CASE("head_only stages leave non-head parameters byte-identical") {
    const auto samples = toy_samples(2, 19);
    const auto model = init_model<float>(tiny_config(), 4);
    const auto opts = toy_options();
    const uint64_t before = non_head_checksum(model);
    Schedule sched;
    sched.stages.push_back({TrainScope::head_only, 2, 4, 1e-2, LabelSet::full});
    const auto result = train_staged(model, samples, samples, sched, 6, opts);
    CHECK(non_head_checksum(result.params) == before);
    // the head itself moved
    CHECK(result.params.store.entry("head.W").value.data !=
          model.store.entry("head.W").value.data);
}

TEST_CASE("super-category stages train a coarse head, then hand back a full head") {
    const auto samples = toy_samples(2, 23);
    const auto model = init_model<float>(tiny_config(), 5);
    const auto opts = toy_options();
    Schedule sched;
    sched.stages.push_back({TrainScope::all, 1, 4, 1e-3, LabelSet::super_category});
    sched.stages.push_back({TrainScope::head_only, 1, 4, 1e-3, LabelSet::full});
    const auto result = train_staged(model, samples, samples, sched, 7, opts);
    CHECK(result.params.config.num_classes == 4);
    CHECK(result.params.store.entry("head.W").value.shape == nn::Shape{16, 4});
}

TEST_CASE("training is deterministic for a fixed seed") {
    const auto samples = toy_samples(2, 29);
    const auto model = init_model<float>(tiny_config(), 6);
    const auto opts = toy_options();
    Schedule sched;
    sched.stages.push_back({TrainScope::all, 1, 4, 1e-3, LabelSet::full});
    const auto a = train_staged(model, samples, samples, sched, 11, opts);
    const auto b = train_staged(model, samples, samples, sched, 11, opts);
    CHECK(a.log[0].train_loss == b.log[0].train_loss);
    for (int i = 0; i < a.params.store.count(); ++i)
        CHECK(a.params.store.entry(i).value.data == b.params.store.entry(i).value.data);
}

TEST_CASE("evaluate_accuracy") {
    const auto samples = toy_samples(3, 31);
    const auto opts = toy_options();
    SUBCASE("untrained zero-head model predicts class 0 everywhere") {
        const auto model = init_model<float>(tiny_config(), 7);
        const auto eval = evaluate_accuracy(model, samples, opts);
        // balanced 4-class set, constant argmax 0 -> accuracy 1/4
        CHECK(eval.accuracy == doctest::Approx(0.25));
        CHECK(eval.per_class_recall[0] == doctest::Approx(1.0));
        CHECK(eval.per_class_recall[1] == doctest::Approx(0.0));
    }
    SUBCASE("manual count on a small set") {
        const auto model = init_model<float>(tiny_config(), 8);
        std::vector<Sample> ten(samples.begin(), samples.begin() + 10);
        const auto eval = evaluate_accuracy(model, ten, opts);
        int correct = 0;
        for (const auto& s : ten) {
            const auto prepared = prepare_sample(s, model.config, opts.decay, opts.horizon);
            std::vector<std::vector<float>> embs;
            for (const auto& surf : prepared.surfaces) embs.push_back(extract_features(surf, model));
            const auto steps = predict_offline(embs, model);
            if (steps.back().predicted == s.label) ++correct;
        }
        CHECK(eval.accuracy == doctest::Approx(double(correct) / 10.0));
    }
}

TEST_CASE("zero-ish learning rate leaves parameters and loss unchanged") {
    const auto samples = toy_samples(2, 37);
    const auto model = init_model<float>(tiny_config(), 9);
    const auto opts = toy_options();
    Schedule sched;
    sched.stages.push_back({TrainScope::all, 2, 4, 1e-12, LabelSet::full});
    const auto result = train_staged(model, samples, samples, sched, 13, opts);
    CHECK(result.log[0].train_loss == doctest::Approx(result.log[1].train_loss).epsilon(1e-6));
}

TEST_SUITE_END();
