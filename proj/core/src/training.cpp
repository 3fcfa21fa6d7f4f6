#include "evt/training.hpp"

#include "evt/kv.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <thread>

namespace evt {

// ---- splits ----------------------------------------------------------------

namespace {

// pool -> train/val by the plan's fractions, deterministic in `rng`
void split_pool(std::vector<int> pool, const SplitPlan& plan, std::mt19937_64& rng,
                SplitResult& out) {
    std::shuffle(pool.begin(), pool.end(), rng);
    const std::size_t n_train = std::size_t(std::lround(plan.train_fraction * double(pool.size())));
    out.train.assign(pool.begin(), pool.begin() + std::min(n_train, pool.size()));
    out.val.assign(pool.begin() + std::min(n_train, pool.size()), pool.end());
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.val.begin(), out.val.end());
}

void warn_missing_classes(const std::vector<Sample>& samples, SplitResult& out) {
    std::set<int> all, in_train;
    for (const auto& s : samples) all.insert(s.label);
    for (int i : out.train) in_train.insert(samples[i].label);
    for (int c : all)
        if (!in_train.count(c))
            out.warnings.push_back("class " + std::to_string(c) + " absent from train split");
}

} // namespace

SplitResult make_split(const std::vector<Sample>& samples, const SplitPlan& plan) {
    if (samples.empty()) throw ConfigError("make_split: empty sample list");
    if (std::abs(plan.train_fraction + plan.val_fraction - 1.0) > 1e-9)
        throw ConfigError("make_split: train_fraction + val_fraction must be 1 over the pool");
    SplitResult out;
    std::mt19937_64 rng(plan.seed);

    if (plan.kind == SplitKind::leave_one_subject_out) {
        std::set<std::string> subjects;
        for (const auto& s : samples) {
            if (s.subject.empty())
                throw ConfigError("make_split: leave_one_subject_out needs subject ids on all samples");
            subjects.insert(s.subject);
        }
        if (!subjects.count(plan.held_out_subject))
            throw ConfigError("make_split: unknown subject id: " + plan.held_out_subject);
        std::vector<int> pool;
        for (int i = 0; i < int(samples.size()); ++i) {
            if (samples[i].subject == plan.held_out_subject)
                out.test.push_back(i);
            else
                pool.push_back(i);
        }
        split_pool(std::move(pool), plan, rng, out);
    } else if (plan.kind == SplitKind::kfold) {
        if (plan.k < 2) throw ConfigError("make_split: kfold needs k >= 2");
        if (plan.held_out_fold < 0 || plan.held_out_fold >= plan.k)
            throw ConfigError("make_split: held_out_fold out of range");
        std::vector<int> order(samples.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<int> pool;
        for (std::size_t i = 0; i < order.size(); ++i) {
            if (int(i % std::size_t(plan.k)) == plan.held_out_fold)
                out.test.push_back(order[i]);
            else
                pool.push_back(order[i]);
        }
        std::sort(out.test.begin(), out.test.end());
        split_pool(std::move(pool), plan, rng, out);
    } else {
        std::vector<int> pool(samples.size());
        std::iota(pool.begin(), pool.end(), 0);
        split_pool(std::move(pool), plan, rng, out);
    }
    warn_missing_classes(samples, out);
    return out;
}

// ---- schedule config --------------------------------------------------------

Schedule parse_schedule(const std::string& text) {
    const auto kv = parse_kv(text);
    auto get = [&](const std::string& key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw ConfigError("schedule: missing key " + key);
        return it->second;
    };
    Schedule sched;
    const int n = std::stoi(get("stages"));
    for (int i = 1; i <= n; ++i) {
        const std::string p = "stage" + std::to_string(i) + ".";
        Stage st;
        const std::string scope = get(p + "scope");
        if (scope == "head_only")
            st.scope = TrainScope::head_only;
        else if (scope == "all")
            st.scope = TrainScope::all;
        else
            throw ConfigError("schedule: bad scope " + scope);
        st.epochs = std::stoi(get(p + "epochs"));
        st.batch_size = std::stoi(get(p + "batch_size"));
        st.learning_rate = std::stod(get(p + "lr"));
        const std::string labels = get(p + "labels");
        if (labels == "super_category")
            st.labels = LabelSet::super_category;
        else if (labels == "full")
            st.labels = LabelSet::full;
        else
            throw ConfigError("schedule: bad labels " + labels);
        sched.stages.push_back(st);
    }
    sched.validate();
    return sched;
}

std::string format_schedule(const Schedule& schedule) {
    std::string out = "stages = " + std::to_string(schedule.stages.size()) + "\n";
    for (std::size_t i = 0; i < schedule.stages.size(); ++i) {
        const auto& st = schedule.stages[i];
        const std::string p = "stage" + std::to_string(i + 1) + ".";
        out += p + "scope = " + (st.scope == TrainScope::head_only ? "head_only" : "all") + "\n";
        out += p + "epochs = " + std::to_string(st.epochs) + "\n";
        out += p + "batch_size = " + std::to_string(st.batch_size) + "\n";
        out += p + "lr = " + std::to_string(st.learning_rate) + "\n";
        out += p + "labels = " +
               (st.labels == LabelSet::super_category ? "super_category" : "full") + "\n";
    }
    return out;
}

// ---- sample preparation -------------------------------------------------------

PreparedSample prepare_sample(const Sample& sample, const ModelConfig& cfg,
                              const DecayConfig& decay, std::size_t horizon) {
    PreparedSample out;
    out.label = sample.label;
    out.super_label = sample.super_label;
    const auto raw = surface_sequence(sample.stream, decay, horizon);
    out.surfaces.reserve(raw.size());
    for (const auto& s : raw)
        out.surfaces.push_back(resize_surface(s, uint16_t(cfg.input_h), uint16_t(cfg.input_w)));
    return out;
}

namespace {

nn::TensorF surface_input(const TimeSurface& s) {
    nn::TensorF t({1, 1, s.height, s.width});
    for (std::size_t i = 0; i < s.values.size(); ++i) t.data[i] = float(s.values[i]);
    return t;
}

// Full-sequence forward: backbone per surface, stack, encoder, per-step logits.
nn::Var<float> sequence_logits(nn::Tape<float>& tape, const ModelParams& params,
                               const std::vector<TimeSurface>& surfaces) {
    std::vector<nn::Var<float>> rows;
    rows.reserve(surfaces.size());
    for (const auto& s : surfaces)
        rows.push_back(backbone_forward(tape, params, tape.leaf(surface_input(s))));
    auto tokens = tape.stack_rows(rows);
    auto enc = temporal_forward(tape, params, tokens);
    return head_forward(tape, params, enc.encoded);
}

int final_step_argmax(const ModelParams& params, const std::vector<TimeSurface>& surfaces) {
    nn::Tape<float> tape(/*grad_enabled=*/false);
    auto logits = tape.value(sequence_logits(tape, params, surfaces));
    const int L = logits.shape[0], C = logits.shape[1];
    std::vector<float> last(logits.data.begin() + std::size_t(L - 1) * C, logits.data.end());
    return argmax_lowest(last);
}

double validation_accuracy(const ModelParams& params, const std::vector<PreparedSample>& val,
                           bool use_super) {
    if (val.empty()) return 0.0;
    int correct = 0;
    for (const auto& s : val) {
        const int want = use_super ? s.super_label : s.label;
        if (final_step_argmax(params, s.surfaces) == want) ++correct;
    }
    return double(correct) / double(val.size());
}

// Loss + gradient accumulation for one sample; mean per-step cross-entropy.
double sample_loss_backward(ModelParams& params, const std::vector<TimeSurface>& surfaces,
                            int label) {
    nn::Tape<float> tape;
    auto logits = sequence_logits(tape, params, surfaces);
    const int L = tape.shape(logits)[0];
    auto loss = tape.softmax_xent(logits, std::vector<int>(std::size_t(L), label));
    const double value = double(tape.value(loss).data[0]);
    tape.backward(loss);
    tape.add_param_grads(params.store);
    return value;
}

} // namespace

TrainResult train_staged(const ModelParams& initial, const std::vector<Sample>& train_set,
                         const std::vector<Sample>& val_set, const Schedule& schedule,
                         uint64_t seed, const TrainOptions& opts) {
    schedule.validate();
    if (train_set.empty() || val_set.empty())
        throw ConfigError("train_staged: train and val sets must be non-empty");
    ModelConfig cfg = initial.config;
    const std::size_t horizon = opts.horizon ? opts.horizon : std::size_t(cfg.queue_len);
    if (horizon > std::size_t(cfg.queue_len))
        throw ConfigError("train_staged: horizon exceeds queue_len");

    std::vector<PreparedSample> train, val;
    train.reserve(train_set.size());
    for (const auto& s : train_set) train.push_back(prepare_sample(s, cfg, opts.decay, horizon));
    val.reserve(val_set.size());
    for (const auto& s : val_set) val.push_back(prepare_sample(s, cfg, opts.decay, horizon));

    int num_super = opts.num_super_classes;
    if (num_super == 0) {
        for (const auto& s : train_set) num_super = std::max(num_super, s.super_label + 1);
        num_super = std::max(num_super, 2);
    }

    TrainResult result;
    ModelParams current = initial;
    bool head_is_super = false;
    double best_val = -1.0;
    bool have_best = false;

    for (std::size_t si = 0; si < schedule.stages.size(); ++si) {
        const Stage& stage = schedule.stages[si];
        const bool use_super = stage.labels == LabelSet::super_category;
        if (use_super && !head_is_super) {
            current = with_fresh_head(current, num_super);
            head_is_super = true;
        } else if (!use_super && head_is_super) {
            current = with_fresh_head(current, initial.config.num_classes);
            head_is_super = false;
        }

        nn::Adam<float> opt(float(stage.learning_rate));
        const bool head_only = stage.scope == TrainScope::head_only;
        auto trainable = head_only ? std::function<bool(const std::string&)>(is_head_param)
                                   : std::function<bool(const std::string&)>();

        std::vector<int> order(train.size());
        std::iota(order.begin(), order.end(), 0);

        for (int epoch = 0; epoch < stage.epochs; ++epoch) {
            const auto t0 = std::chrono::steady_clock::now();
            std::mt19937_64 rng(seed + si * 1000003 + std::size_t(epoch) * 7919);
            std::shuffle(order.begin(), order.end(), rng);

            double loss_sum = 0;
            std::size_t loss_count = 0;
            for (std::size_t b = 0; b < order.size(); b += std::size_t(stage.batch_size)) {
                const std::size_t e = std::min(order.size(), b + std::size_t(stage.batch_size));
                current.store.zero_grads();
                for (std::size_t i = b; i < e; ++i) {
                    const auto& sample = train[order[i]];
                    const int label = use_super ? sample.super_label : sample.label;
                    double loss;
                    if (opts.augment_train) {
                        const uint64_t aug_seed =
                            seed ^ (0x5851F42D4C957F2DULL * (si + 1) * (epoch + 1) * (order[i] + 1));
                        const auto aug = augment(sample.surfaces, opts.augment, aug_seed);
                        loss = sample_loss_backward(current, aug, label);
                    } else {
                        loss = sample_loss_backward(current, sample.surfaces, label);
                    }
                    if (!std::isfinite(loss))
                        throw StateError("training diverged (non-finite loss) at stage " +
                                         std::to_string(si + 1) + " epoch " + std::to_string(epoch + 1));
                    loss_sum += loss;
                    ++loss_count;
                }
                current.store.scale_grads(1.0f / float(e - b));
                opt.step(current.store, trainable);
            }

            EpochLog row;
            row.stage = int(si + 1);
            row.epoch = epoch + 1;
            row.train_loss = loss_sum / double(loss_count);
            row.val_accuracy = validation_accuracy(current, val, use_super);
            row.seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            result.log.push_back(row);
            if (opts.on_epoch) opts.on_epoch(row);

            if (!use_super && row.val_accuracy >= best_val) {
                best_val = row.val_accuracy;
                result.params = current;
                have_best = true;
            }
        }
    }
    if (!have_best) result.params = current;
    return result;
}

EvalBreakdown evaluate_accuracy(const ModelParams& params, const std::vector<Sample>& test_set,
                                const TrainOptions& opts) {
    if (test_set.empty()) throw ConfigError("evaluate_accuracy: empty test set");
    const std::size_t horizon = opts.horizon ? opts.horizon : std::size_t(params.config.queue_len);
    EvalBreakdown out;
    out.per_class_total.assign(std::size_t(params.config.num_classes), 0);
    out.per_class_correct.assign(std::size_t(params.config.num_classes), 0);
    int correct = 0;
    for (const auto& s : test_set) {
        const auto prepared = prepare_sample(s, params.config, opts.decay, horizon);
        const int pred = final_step_argmax(params, prepared.surfaces);
        if (s.label >= 0 && s.label < params.config.num_classes) ++out.per_class_total[s.label];
        if (pred == s.label) {
            ++correct;
            ++out.per_class_correct[s.label];
        }
    }
    out.accuracy = double(correct) / double(test_set.size());
    out.per_class_recall.resize(out.per_class_total.size(), 0.0);
    for (std::size_t c = 0; c < out.per_class_total.size(); ++c)
        if (out.per_class_total[c])
            out.per_class_recall[c] = double(out.per_class_correct[c]) / out.per_class_total[c];
    return out;
}

std::vector<std::pair<PredictionTrace, int>> trace_samples(const ModelParams& params,
                                                           const std::vector<Sample>& samples,
                                                           const TrainOptions& opts) {
    std::vector<std::pair<PredictionTrace, int>> out;
    out.reserve(samples.size());
    PipelineConfig cfg;
    cfg.decay = opts.decay;
    cfg.apply_filter = false; // callers denoise upstream if needed
    cfg.horizon = opts.horizon;
    for (const auto& s : samples) out.emplace_back(run_stream(s.stream, params, cfg), s.label);
    return out;
}

void write_train_log_csv(const std::string& path, const std::vector<EpochLog>& log) {
    std::ofstream f(path);
    if (!f) throw Error("cannot open for write: " + path);
    f << "stage,epoch,train_loss,val_acc,seconds\n";
    for (const auto& row : log)
        f << row.stage << ',' << row.epoch << ',' << row.train_loss << ',' << row.val_accuracy
          << ',' << row.seconds << '\n';
}

} // namespace evt
