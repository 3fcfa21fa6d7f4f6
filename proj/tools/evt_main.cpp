// evt: command-line front end for the event-stream action-prediction pipeline.
//
// Subcommands: convert, filter, surfaces, synth, train, infer, eval, bench, attn.
// Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 internal error.

#include "evt/evalbench.hpp"
#include "evt/event_codec.hpp"
#include "evt/kv.hpp"
#include "evt/model.hpp"
#include "evt/synthetic.hpp"
#include "evt/time_surface.hpp"
#include "evt/training.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using namespace evt;

// ---- shared option bundles -------------------------------------------------

struct DecayFlags {
    uint64_t tau_us = 33000;
    uint64_t cadence_us = 33000;
    std::string mode = "latest_event";

    void attach(CLI::App* cmd) {
        cmd->add_option("--tau-us", tau_us, "decay constant in microseconds");
        cmd->add_option("--cadence-us", cadence_us, "surface interval in microseconds");
        cmd->add_option("--mode", mode, "latest_event | decayed_sum");
    }
    DecayConfig to_config() const {
        DecayConfig cfg;
        cfg.tau_us = tau_us;
        cfg.cadence_us = cadence_us;
        cfg.mode = surface_mode_from_string(mode);
        return cfg;
    }
};

struct FilterFlags {
    int radius = 1;
    uint64_t window_us = 5000;
    int min_neighbors = 1;
    bool no_filter = false;

    void attach(CLI::App* cmd) {
        cmd->add_option("--radius", radius, "filter spatial radius (Chebyshev, pixels)");
        cmd->add_option("--window-us", window_us, "filter temporal window in microseconds");
        cmd->add_option("--min-neighbors", min_neighbors, "neighbors required to keep an event");
        cmd->add_flag("--no-filter", no_filter, "skip the isolated-event filter");
    }
    FilterConfig to_config() const { return {radius, window_us, min_neighbors}; }
};

ModelConfig model_config_from_kv(const std::map<std::string, std::string>& kv) {
    ModelConfig cfg;
    auto geti = [&](const char* key, int& slot) {
        auto it = kv.find(key);
        if (it != kv.end()) slot = std::stoi(it->second);
    };
    geti("input_h", cfg.input_h);
    geti("input_w", cfg.input_w);
    geti("embed_dim", cfg.embed_dim);
    geti("heads", cfg.heads);
    geti("encoder_layers", cfg.encoder_layers);
    geti("queue_len", cfg.queue_len);
    geti("num_classes", cfg.num_classes);
    geti("ffn_dim", cfg.ffn_dim);
    auto it = kv.find("backbone");
    if (it != kv.end()) {
        cfg.backbone.clear();
        std::stringstream ss(it->second);
        std::string block;
        while (std::getline(ss, block, ',')) {
            const auto colon = block.find(':');
            if (colon == std::string::npos)
                throw ConfigError("backbone entry needs channels:stride, got: " + block);
            cfg.backbone.push_back(
                {std::stoi(block.substr(0, colon)), std::stoi(block.substr(colon + 1))});
        }
    }
    cfg.validate();
    return cfg;
}

ModelConfig load_model_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error("cannot open: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return model_config_from_kv(parse_kv(ss.str()));
}

// Manifest CSV: header "path,label,super_label,subject"; super_label and
// subject may be empty. Paths are resolved relative to the manifest.
std::vector<Sample> load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error("cannot open: " + path);
    std::string line;
    if (!std::getline(f, line)) throw ParseError("manifest: empty file", 0);
    if (line.rfind("path,label", 0) != 0)
        throw ParseError("manifest: expected 'path,label,super_label,subject' header", 0);
    const auto dir = std::filesystem::path(path).parent_path();
    std::vector<Sample> out;
    std::size_t line_no = 1;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string p, label, super_label, subject;
        std::getline(ss, p, ',');
        std::getline(ss, label, ',');
        std::getline(ss, super_label, ',');
        std::getline(ss, subject, ',');
        if (p.empty() || label.empty())
            throw ParseError("manifest: line needs path,label", line_no);
        Sample s;
        s.stream = read_stream_file((dir / p).string());
        s.label = std::stoi(label);
        s.super_label = super_label.empty() ? 0 : std::stoi(super_label);
        s.subject = subject;
        s.stream.label = s.label;
        s.stream.subject = subject.empty() ? std::optional<std::string>{} : subject;
        out.push_back(std::move(s));
    }
    return out;
}

// ---- subcommand bodies -----------------------------------------------------

struct ConvertArgs {
    std::string input, out;
    uint16_t width = 0, height = 0;
};

int run_convert(const ConvertArgs& a) {
    const auto stream = read_stream_file(a.input, a.width, a.height);
    write_stream_file(a.out, stream);
    std::cerr << "convert: " << stream.events.size() << " events -> " << a.out << "\n";
    return 0;
}

struct FilterArgs {
    std::string input, out;
    FilterFlags flags;
};

int run_filter(const FilterArgs& a) {
    const auto stream = read_stream_file(a.input);
    const auto kept = filter_isolated(stream, a.flags.to_config());
    write_stream_file(a.out, kept);
    std::cerr << "filter: kept " << kept.events.size() << " of " << stream.events.size()
              << " events\n";
    return 0;
}

struct SurfacesArgs {
    std::string input, out;
    DecayFlags decay;
    std::size_t horizon = 0;
    int resize_h = 0, resize_w = 0;
};

int run_surfaces(const SurfacesArgs& a) {
    const auto cfg = a.decay.to_config();
    const auto stream = read_stream_file(a.input);
    std::size_t horizon = a.horizon;
    if (horizon == 0) horizon = std::size_t(stream.duration_us() / cfg.cadence_us);
    if (horizon == 0) throw ValidationError("surfaces: stream shorter than one cadence interval");
    auto seq = surface_sequence(stream, cfg, horizon);
    if (a.resize_h > 0 && a.resize_w > 0)
        for (auto& s : seq) s = resize_surface(s, uint16_t(a.resize_h), uint16_t(a.resize_w));
    write_surfaces_file(a.out, seq);
    std::cerr << "surfaces: wrote " << seq.size() << " surfaces -> " << a.out << "\n";
    return 0;
}

struct SynthArgs {
    std::string pattern = "cyclic_horizontal";
    std::string out;
    double duration = 2.0;
    double rate = 10000.0;
    double noise_rate = 0.0;
    double period = 0.5;
    uint64_t seed = 0;
    uint16_t width = 64, height = 64;
    int label = -1;
    std::string subject;
    std::string manifest;
};

int run_synth(const SynthArgs& a) {
    MotionScript script;
    script.pattern = motion_pattern_from_string(a.pattern);
    script.duration_s = a.duration;
    script.rate = a.rate;
    script.noise_rate = a.noise_rate;
    script.period_s = a.period;
    script.seed = a.seed;
    auto stream = generate_synthetic(script, a.width, a.height);
    if (a.label >= 0) stream.label = a.label;
    if (!a.subject.empty()) stream.subject = a.subject;
    write_stream_file(a.out, stream);
    if (!a.manifest.empty()) {
        const bool fresh = !std::filesystem::exists(a.manifest);
        std::ofstream mf(a.manifest, std::ios::app);
        if (!mf) throw Error("cannot open manifest for append: " + a.manifest);
        if (fresh) mf << "path,label,super_label,subject\n";
        const auto rel = std::filesystem::relative(
            a.out, std::filesystem::path(a.manifest).parent_path());
        mf << rel.string() << ',' << std::max(a.label, 0) << ','
           << (is_cyclic(script.pattern) ? 0 : 1) << ',' << a.subject << "\n";
    }
    std::cerr << "synth: " << stream.events.size() << " events -> " << a.out << "\n";
    return 0;
}

struct TrainArgs {
    std::string manifest, schedule_path, out, log_path, model_config_path;
    uint64_t seed = 0;
    DecayFlags decay;
    std::size_t horizon = 0;
    std::string split = "fixed";
    std::string held_out_subject;
    int kfolds = 4, fold = 0;
    bool augment_on = false;
};

int run_train(const TrainArgs& a) {
    // validate everything before any output file is touched
    std::ifstream sf(a.schedule_path);
    if (!sf) throw Error("cannot open: " + a.schedule_path);
    std::stringstream ss;
    ss << sf.rdbuf();
    const Schedule schedule = parse_schedule(ss.str());

    ModelConfig cfg = a.model_config_path.empty() ? ModelConfig{} : load_model_config(a.model_config_path);
    cfg.validate();

    const auto samples = load_manifest(a.manifest);
    int max_label = 0;
    for (const auto& s : samples) max_label = std::max(max_label, s.label);
    if (max_label + 1 > cfg.num_classes)
        throw ConfigError("manifest labels exceed num_classes=" + std::to_string(cfg.num_classes));

    SplitPlan plan;
    plan.seed = a.seed;
    if (a.split == "fixed") {
        plan.kind = SplitKind::fixed;
    } else if (a.split == "loso") {
        plan.kind = SplitKind::leave_one_subject_out;
        plan.held_out_subject = a.held_out_subject;
    } else if (a.split == "kfold") {
        plan.kind = SplitKind::kfold;
        plan.k = a.kfolds;
        plan.held_out_fold = a.fold;
    } else {
        throw ConfigError("unknown split kind: " + a.split);
    }
    const auto split = make_split(samples, plan);
    for (const auto& w : split.warnings) std::cerr << "train: warning: " << w << "\n";

    std::vector<Sample> train_set, val_set, test_set;
    for (int i : split.train) train_set.push_back(samples[i]);
    for (int i : split.val) val_set.push_back(samples[i]);
    for (int i : split.test) test_set.push_back(samples[i]);

    TrainOptions opts;
    opts.decay = a.decay.to_config();
    opts.horizon = a.horizon;
    opts.augment_train = a.augment_on;
    if (a.augment_on) opts.augment = AugmentPolicy{};
    opts.on_epoch = [](const EpochLog& row) {
        std::cerr << "stage " << row.stage << " epoch " << row.epoch << ": loss=" << row.train_loss
                  << " val_acc=" << row.val_accuracy << " (" << row.seconds << "s)\n";
    };

    const auto initial = init_model<float>(cfg, a.seed);
    const auto result = train_staged(initial, train_set, val_set, schedule, a.seed, opts);
    save_model(a.out, result.params);
    if (!a.log_path.empty()) write_train_log_csv(a.log_path, result.log);

    if (!test_set.empty()) {
        const auto eval = evaluate_accuracy(result.params, test_set, opts);
        std::cerr << "train: held-out accuracy " << eval.accuracy << "\n";
    }
    std::cerr << "train: saved model -> " << a.out << "\n";
    return 0;
}

struct InferArgs {
    std::string model, input, out, attn_out, svg_out;
    DecayFlags decay;
    FilterFlags filter;
    std::size_t horizon = 0;
    bool from_stdin = false;
};

// Incremental framing over a pipe: u32-le length-prefixed chunks of
// binary_v1 bytes (16-byte header first, then whole 13-byte records split
// anywhere). A trace line is emitted as soon as a cadence boundary completes.
int run_stream_infer(const InferArgs& a, const ModelParams& params, std::ostream& out) {
    const DecayConfig decay = a.decay.to_config();
    const FilterConfig filter = a.filter.to_config();

    std::vector<uint8_t> pending;
    bool have_header = false;
    EventStream stream;
    bool have_t0 = false;
    uint64_t t0 = 0, last_raw_t = 0;

    OnlineState state(params.config);
    RunStats stats;
    uint64_t next_boundary = decay.cadence_us;

    out << "t_ms";
    for (int c = 0; c < params.config.num_classes; ++c) out << ",conf_c" << c;
    out << ",argmax\n";
    out.flush();

    auto emit_through = [&](uint64_t boundary_limit) {
        while (next_boundary <= boundary_limit) {
            // filter with the settle margin as context, then keep only events
            // strictly before the boundary; this reproduces the batch filter's
            // decisions for every surviving event
            const EventStream context =
                slice_window(stream, 0, next_boundary + filter.temporal_window);
            const EventStream filtered =
                a.filter.no_filter ? context : filter_isolated(context, filter);
            const EventStream window = slice_window(filtered, 0, next_boundary);
            const auto surface = build_time_surface(window, next_boundary, decay);
            const auto resized = resize_surface(surface, uint16_t(params.config.input_h),
                                                uint16_t(params.config.input_w));
            const auto step =
                push_and_predict(state, extract_features(resized, params, &stats), params);
            out << (double(next_boundary) / 1000.0);
            char buf[64];
            for (float v : step.confidence) {
                std::snprintf(buf, sizeof buf, "%.9g", double(v));
                out << ',' << buf;
            }
            out << ',' << step.predicted << '\n';
            out.flush();
            next_boundary += decay.cadence_us;
        }
    };

    // With filtering on, a boundary B is complete only once events through
    // B + temporal_window have arrived: keep decisions for events just before
    // B need neighbors just after it, exactly as the batch filter sees them.
    const uint64_t settle = a.filter.no_filter ? 0 : filter.temporal_window;

    auto feed_record = [&](const uint8_t* rec) {
        Event e;
        e.x = uint16_t(rec[0]) | uint16_t(rec[1]) << 8;
        e.y = uint16_t(rec[2]) | uint16_t(rec[3]) << 8;
        uint64_t t = 0;
        for (int i = 0; i < 8; ++i) t |= uint64_t(rec[4 + i]) << (8 * i);
        e.p = int8_t(rec[12]);
        if (!have_t0) {
            t0 = t;
            have_t0 = true;
        }
        if (t < last_raw_t) {
            const uint64_t norm = t - std::min(t0, t);
            if (norm < next_boundary - decay.cadence_us)
                throw ValidationError(
                    "stream_infer: event at t=" + std::to_string(norm) +
                    "us crosses the already-emitted boundary at t=" +
                    std::to_string(next_boundary - decay.cadence_us) + "us");
            throw ValidationError("stream_infer: non-monotonic timestamp " + std::to_string(t));
        }
        last_raw_t = t;
        e.t = t - t0;
        if (e.p != -1 && e.p != 1)
            throw ValidationError("stream_infer: polarity " + std::to_string(int(e.p)));
        if (e.x >= stream.sensor_width || e.y >= stream.sensor_height)
            throw ValidationError("stream_infer: event out of bounds");
        if (e.t >= settle) emit_through(e.t - settle);
        stream.events.push_back(e);
    };

    auto pump = [&]() {
        std::size_t off = 0;
        if (!have_header) {
            if (pending.size() < kBinaryHeaderSize) return;
            if (std::memcmp(pending.data(), "EVS1", 4) != 0)
                throw ParseError("stream_infer: bad header magic", 0);
            stream.sensor_width = uint16_t(pending[4]) | uint16_t(pending[5]) << 8;
            stream.sensor_height = uint16_t(pending[6]) | uint16_t(pending[7]) << 8;
            off = kBinaryHeaderSize; // count field ignored for live streams
            have_header = true;
        }
        while (pending.size() - off >= kBinaryRecordSize) {
            feed_record(pending.data() + off);
            off += kBinaryRecordSize;
        }
        pending.erase(pending.begin(), pending.begin() + std::ptrdiff_t(off));
    };

    std::istream& in = std::cin;
    while (true) {
        uint8_t len_bytes[4];
        in.read(reinterpret_cast<char*>(len_bytes), 4);
        if (in.gcount() == 0) break;
        if (in.gcount() != 4) throw ParseError("stream_infer: truncated chunk length", 0);
        uint32_t len = 0;
        for (int i = 0; i < 4; ++i) len |= uint32_t(len_bytes[i]) << (8 * i);
        std::vector<uint8_t> chunk(len);
        in.read(reinterpret_cast<char*>(chunk.data()), std::streamsize(len));
        if (uint32_t(in.gcount()) != len) throw ParseError("stream_infer: truncated chunk", 0);
        pending.insert(pending.end(), chunk.begin(), chunk.end());
        pump();
    }
    // end of stream: boundaries up to the last seen timestamp are complete;
    // a trailing partial interval emits nothing
    if (have_t0) emit_through(stream.events.empty() ? 0 : stream.events.back().t);
    std::cerr << "stream_infer: " << stats.backbone_forwards << " surfaces\n";
    return 0;
}

int run_infer(const InferArgs& a) {
    const auto params = load_model(a.model);
    if (a.from_stdin) {
        if (!a.out.empty()) {
            std::ofstream f(a.out);
            if (!f) throw Error("cannot open for write: " + a.out);
            return run_stream_infer(a, params, f);
        }
        return run_stream_infer(a, params, std::cout);
    }
    const auto stream = read_stream_file(a.input);
    PipelineConfig cfg;
    cfg.decay = a.decay.to_config();
    cfg.filter = a.filter.to_config();
    cfg.apply_filter = !a.filter.no_filter;
    cfg.horizon = a.horizon;
    RunStats stats;
    const auto trace = run_stream(stream, params, cfg, &stats);
    write_trace_csv(a.out, trace);
    if (!a.attn_out.empty()) write_attention_file(a.attn_out, trace);
    if (!a.svg_out.empty()) write_confidence_trace_svg(a.svg_out, trace);
    std::cerr << "infer: " << trace.steps.size() << " steps, " << stats.backbone_forwards
              << " backbone passes -> " << a.out << "\n";
    return 0;
}

struct EvalArgs {
    std::string traces_manifest, out, confusion_out, svg_out;
    uint64_t bin_ms = 250;
    int num_classes = 0;
};

int run_eval(const EvalArgs& a) {
    std::ifstream f(a.traces_manifest);
    if (!f) throw Error("cannot open: " + a.traces_manifest);
    std::string line;
    if (!std::getline(f, line) || line.rfind("path,label", 0) != 0)
        throw ParseError("traces manifest: expected 'path,label' header", 0);
    const auto dir = std::filesystem::path(a.traces_manifest).parent_path();
    std::vector<std::pair<PredictionTrace, int>> traces;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw ParseError("traces manifest: need path,label", 0);
        traces.emplace_back(read_trace_csv((dir / line.substr(0, comma)).string()),
                            std::stoi(line.substr(comma + 1)));
    }
    if (traces.empty()) throw ValidationError("eval: no traces listed");

    const auto curve = accuracy_over_time(traces, a.bin_ms);
    write_accuracy_curve_csv(a.out, curve);
    if (!a.svg_out.empty()) write_accuracy_curve_svg(a.svg_out, curve);
    if (!a.confusion_out.empty()) {
        int classes = a.num_classes;
        if (classes == 0)
            for (const auto& [t, label] : traces) classes = std::max(classes, t.num_classes);
        write_confusion_csv(a.confusion_out, confusion_matrix(traces, classes));
    }
    std::cerr << "eval: " << traces.size() << " traces, " << curve.bin_end_ms.size()
              << " bins -> " << a.out << "\n";
    return 0;
}

struct BenchArgs {
    std::string model, model_config_path, out;
    std::size_t surfaces = 240;
    int repeats = 5;
    bool flops_only = false;
    uint64_t seed = 0;
};

int run_bench(const BenchArgs& a) {
    ModelParams params;
    if (!a.model.empty()) {
        params = load_model(a.model);
    } else {
        ModelConfig cfg =
            a.model_config_path.empty() ? ModelConfig{} : load_model_config(a.model_config_path);
        params = init_model<float>(cfg, a.seed);
    }

    const auto flops = count_flops(params.config);
    std::ostringstream report;
    report << "flops.backbone_per_surface," << flops.backbone_per_surface << "\n";
    report << "flops.encoder_per_step," << flops.encoder_per_step << "\n";
    report << "flops.head_per_step," << flops.head_per_step << "\n";
    report << "flops.sequence_total," << flops.sequence_total << "\n";

    if (!a.flops_only) {
        const auto t = benchmark_throughput(params, a.surfaces, a.repeats);
        report << "throughput.surfaces," << t.surfaces << "\n";
        report << "throughput.seconds," << t.seconds << "\n";
        report << "throughput.ts_per_s," << t.ts_per_s << "\n";
        report << "latency.p50_ms," << t.p50_ms << "\n";
        report << "latency.p99_ms," << t.p99_ms << "\n";
        report << "latency.fill1_ms," << t.fill1_ms << "\n";
        report << "latency.full_ms," << t.full_ms << "\n";
        report << "latency.encoder_step_ms," << t.encoder_step_ms << "\n";
    }
    if (a.out.empty()) {
        std::cout << report.str();
    } else {
        std::ofstream f(a.out);
        if (!f) throw Error("cannot open for write: " + a.out);
        f << report.str();
    }
    return 0;
}

struct AttnArgs {
    std::string input, out;
    int head = 0;
    int step = -1;
};

int run_attn(const AttnArgs& a) {
    const auto records = read_attention_file(a.input);
    if (records.empty()) throw ValidationError("attn: no records in " + a.input);
    const AttentionRecord* pick = nullptr;
    for (const auto& rec : records) {
        if (int(rec.head) != a.head) continue;
        if (a.step >= 0 && int(rec.step) != a.step) continue;
        pick = &rec; // last matching record wins when --step is omitted
    }
    if (!pick) throw ValidationError("attn: no record for head " + std::to_string(a.head));

    const int L = pick->matrix.shape[0];
    // contract check: lower-triangular, row-stochastic
    for (int i = 0; i < L; ++i) {
        double sum = 0;
        for (int j = 0; j < L; ++j) {
            if (j > i && pick->matrix.at(i, j) != 0.0f)
                throw ValidationError("attn: record violates the causal mask");
            sum += pick->matrix.at(i, j);
        }
        if (std::abs(sum - 1.0) > 1e-5)
            throw ValidationError("attn: row " + std::to_string(i) + " sums to " + std::to_string(sum));
    }
    std::ofstream f(a.out);
    if (!f) throw Error("cannot open for write: " + a.out);
    for (int i = 0; i < L; ++i) {
        for (int j = 0; j < L; ++j) f << (j ? "," : "") << pick->matrix.at(i, j);
        f << '\n';
    }
    std::cerr << "attn: step " << pick->step << " head " << int(pick->head) << " (" << L << "x" << L
              << ") -> " << a.out << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"event-stream action prediction pipeline"};
    app.require_subcommand(1);
    app.set_config("--config")->configurable(false);

    ConvertArgs convert_args;
    auto* convert = app.add_subcommand("convert", "convert a stream between binary_v1 and csv");
    convert->add_option("--input", convert_args.input, "input stream (.evs1 or .csv)")->required();
    convert->add_option("--out", convert_args.out, "output stream (.evs1 or .csv)")->required();
    convert->add_option("--width", convert_args.width, "sensor width for csv inputs");
    convert->add_option("--height", convert_args.height, "sensor height for csv inputs");

    FilterArgs filter_args;
    auto* filter = app.add_subcommand("filter", "remove spatio-temporally isolated events");
    filter->add_option("--input", filter_args.input)->required();
    filter->add_option("--out", filter_args.out)->required();
    filter_args.flags.attach(filter);

    SurfacesArgs surfaces_args;
    auto* surfaces = app.add_subcommand("surfaces", "build decaying time surfaces (TSF1)");
    surfaces->add_option("--input", surfaces_args.input)->required();
    surfaces->add_option("--out", surfaces_args.out)->required();
    surfaces->add_option("--horizon", surfaces_args.horizon, "surface count (0 = from duration)");
    surfaces->add_option("--resize-h", surfaces_args.resize_h);
    surfaces->add_option("--resize-w", surfaces_args.resize_w);
    surfaces_args.decay.attach(surfaces);

    SynthArgs synth_args;
    auto* synth = app.add_subcommand("synth", "generate a synthetic labeled event stream");
    synth->add_option("--pattern", synth_args.pattern,
                      "cyclic_horizontal | cyclic_vertical | discrete_arc | discrete_linear");
    synth->add_option("--out", synth_args.out)->required();
    synth->add_option("--duration", synth_args.duration, "seconds");
    synth->add_option("--rate", synth_args.rate, "mean signal events per second");
    synth->add_option("--noise-rate", synth_args.noise_rate, "spurious events per second");
    synth->add_option("--period", synth_args.period, "cycle period for cyclic patterns (s)");
    synth->add_option("--seed", synth_args.seed);
    synth->add_option("--width", synth_args.width);
    synth->add_option("--height", synth_args.height);
    synth->add_option("--label", synth_args.label, "class label recorded in the manifest");
    synth->add_option("--subject", synth_args.subject);
    synth->add_option("--manifest", synth_args.manifest, "append path,label,super_label,subject");

    TrainArgs train_args;
    auto* train = app.add_subcommand("train", "staged training on a labeled manifest");
    train->add_option("--manifest", train_args.manifest)->required();
    train->add_option("--schedule", train_args.schedule_path, "schedule key-value file")->required();
    train->add_option("--out", train_args.out, "output model (.nnp1)")->required();
    train->add_option("--model-config", train_args.model_config_path, "model key-value file");
    train->add_option("--log", train_args.log_path, "training log CSV");
    train->add_option("--seed", train_args.seed);
    train->add_option("--horizon", train_args.horizon, "surfaces per sample (0 = queue_len)");
    train->add_option("--split", train_args.split, "fixed | loso | kfold");
    train->add_option("--held-out", train_args.held_out_subject, "subject id for loso");
    train->add_option("--k", train_args.kfolds, "fold count for kfold");
    train->add_option("--fold", train_args.fold, "held-out fold index");
    train->add_flag("--augment", train_args.augment_on, "enable train-time augmentation");
    train_args.decay.attach(train);

    InferArgs infer_args;
    auto* infer = app.add_subcommand("infer", "run the online pipeline over a stream");
    infer->add_option("--model", infer_args.model)->required();
    infer->add_option("--input", infer_args.input, "input stream (omit with --stdin)");
    infer->add_option("--out", infer_args.out, "trace CSV (stdout for --stdin when omitted)");
    infer->add_option("--attn-out", infer_args.attn_out, "attention record file (ATT1)");
    infer->add_option("--svg", infer_args.svg_out, "confidence chart SVG");
    infer->add_option("--horizon", infer_args.horizon, "surface count (0 = from duration)");
    infer->add_flag("--stdin", infer_args.from_stdin, "read length-prefixed chunks from stdin");
    infer_args.decay.attach(infer);
    infer_args.filter.attach(infer);

    EvalArgs eval_args;
    auto* eval = app.add_subcommand("eval", "accuracy-over-time and confusion from traces");
    eval->add_option("--traces", eval_args.traces_manifest, "manifest: path,label")->required();
    eval->add_option("--out", eval_args.out, "accuracy curve CSV")->required();
    eval->add_option("--bin-ms", eval_args.bin_ms);
    eval->add_option("--confusion", eval_args.confusion_out, "confusion matrix CSV");
    eval->add_option("--svg", eval_args.svg_out, "accuracy curve SVG");
    eval->add_option("--classes", eval_args.num_classes);

    BenchArgs bench_args;
    auto* bench = app.add_subcommand("bench", "FLOP counts and throughput (TS/s)");
    bench->add_option("--model", bench_args.model, "model checkpoint (.nnp1)");
    bench->add_option("--model-config", bench_args.model_config_path, "model key-value file");
    bench->add_option("--surfaces", bench_args.surfaces);
    bench->add_option("--repeats", bench_args.repeats);
    bench->add_option("--out", bench_args.out, "report CSV (stdout when omitted)");
    bench->add_option("--seed", bench_args.seed);
    bench->add_flag("--flops-only", bench_args.flops_only, "skip wall-clock timing");

    AttnArgs attn_args;
    auto* attn = app.add_subcommand("attn", "extract one head's attention matrix from ATT1");
    attn->add_option("--input", attn_args.input, "ATT1 record file")->required();
    attn->add_option("--head", attn_args.head)->required();
    attn->add_option("--step", attn_args.step, "step index (default: last)");
    attn->add_option("--out", attn_args.out, "matrix CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (convert->parsed()) return run_convert(convert_args);
        if (filter->parsed()) return run_filter(filter_args);
        if (surfaces->parsed()) return run_surfaces(surfaces_args);
        if (synth->parsed()) return run_synth(synth_args);
        if (train->parsed()) return run_train(train_args);
        if (infer->parsed()) {
            if (!infer_args.from_stdin && infer_args.input.empty()) {
                std::cerr << "infer: --input is required without --stdin\n";
                return 1;
            }
            if (!infer_args.from_stdin && infer_args.out.empty()) {
                std::cerr << "infer: --out is required without --stdin\n";
                return 1;
            }
            return run_infer(infer_args);
        }
        if (eval->parsed()) return run_eval(eval_args);
        if (bench->parsed()) return run_bench(bench_args);
        if (attn->parsed()) return run_attn(attn_args);
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 3;
    }
    return 1;
}
