#pragma once

#include "evt/model.hpp"
#include "evt/synthetic.hpp"
#include "evt/time_surface.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace evt {

// One labeled recording plus the coarse "super-category" label used by the
// staged schedules.
struct Sample {
    EventStream stream;
    int label = 0;
    int super_label = 0;
    std::string subject;
};

enum class SplitKind { leave_one_subject_out, kfold, fixed };

struct SplitPlan {
    SplitKind kind = SplitKind::fixed;
    std::string held_out_subject; // leave_one_subject_out
    int held_out_fold = 0;        // kfold
    int k = 4;                    // kfold
    double train_fraction = 0.85;
    double val_fraction = 0.15;
    uint64_t seed = 0;
};

struct SplitResult {
    std::vector<int> train; // indices into the sample list
    std::vector<int> val;
    std::vector<int> test;
    std::vector<std::string> warnings; // e.g. class absent from train
};

// Disjoint train/val/test indices; the held-out subject (or fold) appears in
// test only. Deterministic for a fixed seed.
SplitResult make_split(const std::vector<Sample>& samples, const SplitPlan& plan);

enum class TrainScope { head_only, all };
enum class LabelSet { super_category, full };

struct Stage {
    TrainScope scope = TrainScope::all;
    int epochs = 1;
    int batch_size = 8;
    double learning_rate = 1e-3;
    LabelSet labels = LabelSet::full;
};

struct Schedule {
    std::vector<Stage> stages;
    void validate() const {
        if (stages.empty()) throw ConfigError("schedule has no stages");
        for (const auto& s : stages) {
            if (s.epochs <= 0) throw ConfigError("stage epochs must be > 0");
            if (s.batch_size <= 0) throw ConfigError("stage batch_size must be > 0");
            if (s.learning_rate <= 0) throw ConfigError("stage learning_rate must be > 0");
        }
    }
};

// Flat key-value schedule file:
//   stages = N
//   stageK.scope = head_only | all
//   stageK.epochs = int
//   stageK.batch_size = int
//   stageK.lr = float
//   stageK.labels = super_category | full
Schedule parse_schedule(const std::string& text);
std::string format_schedule(const Schedule& schedule);

struct EpochLog {
    int stage = 0;
    int epoch = 0;
    double train_loss = 0.0;
    double val_accuracy = 0.0;
    double seconds = 0.0;
};

struct TrainOptions {
    DecayConfig decay;
    std::size_t horizon = 0;           // surfaces per sample; 0 = queue_len
    AugmentPolicy augment = AugmentPolicy::identity();
    bool augment_train = false;
    int num_super_classes = 0;         // 0 = max super label + 1
    std::function<void(const EpochLog&)> on_epoch; // optional progress hook
};

struct TrainResult {
    ModelParams params;         // best-validation checkpoint (full label set)
    std::vector<EpochLog> log;  // per-epoch rows: stage, epoch, loss, val acc, seconds
};

// Executes the stages in order. head_only stages leave every non-head
// parameter byte-identical; stages with the super_category label set train a
// temporary coarse head that is replaced when the full label set returns.
// Aborts with StateError naming stage/epoch if the loss goes non-finite.
TrainResult train_staged(const ModelParams& initial, const std::vector<Sample>& train_set,
                         const std::vector<Sample>& val_set, const Schedule& schedule,
                         uint64_t seed, const TrainOptions& opts);

struct EvalBreakdown {
    double accuracy = 0.0;
    std::vector<int> per_class_total;
    std::vector<int> per_class_correct;
    std::vector<double> per_class_recall;
};

// Fraction of streams whose final-step argmax equals the label.
EvalBreakdown evaluate_accuracy(const ModelParams& params, const std::vector<Sample>& test_set,
                                const TrainOptions& opts);

// Full-pipeline traces for a labeled set (used by the eval tooling).
std::vector<std::pair<PredictionTrace, int>> trace_samples(const ModelParams& params,
                                                           const std::vector<Sample>& samples,
                                                           const TrainOptions& opts);

// Training log CSV: stage, epoch, train_loss, val_acc, seconds.
void write_train_log_csv(const std::string& path, const std::vector<EpochLog>& log);

// Cached per-sample inputs: resized surfaces ready for the backbone.
struct PreparedSample {
    std::vector<TimeSurface> surfaces;
    int label = 0;
    int super_label = 0;
};
PreparedSample prepare_sample(const Sample& sample, const ModelConfig& cfg,
                              const DecayConfig& decay, std::size_t horizon);

} // namespace evt
