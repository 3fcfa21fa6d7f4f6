#include "evt/evalbench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace evt {

// ---- accuracy over time ------------------------------------------------------

AccuracyCurve accuracy_over_time(const std::vector<std::pair<PredictionTrace, int>>& traces,
                                 uint64_t bin_ms) {
    if (traces.empty()) throw ConfigError("accuracy_over_time: no traces");
    if (bin_ms == 0) throw ConfigError("accuracy_over_time: bin_ms must be > 0");

    uint64_t max_ms = 0;
    for (const auto& [trace, label] : traces)
        for (const auto& step : trace.steps) max_ms = std::max(max_ms, step.t_ref_us / 1000);

    AccuracyCurve curve;
    for (uint64_t end = bin_ms; end <= max_ms + bin_ms - 1; end += bin_ms) {
        const uint64_t start = end - bin_ms;
        std::vector<double> per_trace;
        for (const auto& [trace, label] : traces) {
            // a trace contributes iff it has at least one step in the bin
            int hits = 0, total = 0;
            for (const auto& step : trace.steps) {
                const uint64_t ms = step.t_ref_us / 1000;
                if (ms >= start && ms < end) {
                    ++total;
                    if (step.predicted == label) ++hits;
                }
            }
            if (total > 0) per_trace.push_back(double(hits) / total);
        }
        if (per_trace.empty()) continue;
        double mean = 0;
        for (double a : per_trace) mean += a;
        mean /= double(per_trace.size());
        double var = 0;
        for (double a : per_trace) var += (a - mean) * (a - mean);
        var /= double(per_trace.size());
        curve.bin_end_ms.push_back(end);
        curve.mean_acc.push_back(mean);
        curve.std_acc.push_back(std::sqrt(var));
        curve.n.push_back(int(per_trace.size()));
    }
    return curve;
}

std::vector<std::vector<int>> confusion_matrix(
    const std::vector<std::pair<PredictionTrace, int>>& traces, int num_classes) {
    if (num_classes < 1) throw ConfigError("confusion_matrix: num_classes must be >= 1");
    std::vector<std::vector<int>> m(std::size_t(num_classes), std::vector<int>(std::size_t(num_classes), 0));
    for (const auto& [trace, label] : traces) {
        if (trace.steps.empty()) throw ValidationError("confusion_matrix: trace with no steps");
        const int pred = trace.steps.back().predicted;
        if (label < 0 || label >= num_classes || pred < 0 || pred >= num_classes)
            throw ValidationError("confusion_matrix: label/prediction out of range");
        ++m[std::size_t(label)][std::size_t(pred)];
    }
    return m;
}

// ---- analytical FLOPs -----------------------------------------------------
// 1 MAC = 2 FLOPs throughout; see docs/flops.md.

std::uint64_t dense_flops(int d_in, int d_out) {
    return 2ull * std::uint64_t(d_in) * std::uint64_t(d_out);
}

std::uint64_t conv_flops(int k, int c_in, int c_out, int h_out, int w_out, bool depthwise) {
    const std::uint64_t per_pos = depthwise
                                      ? 2ull * std::uint64_t(k) * k * std::uint64_t(c_in)
                                      : 2ull * std::uint64_t(k) * k * std::uint64_t(c_in) * c_out;
    return per_pos * std::uint64_t(h_out) * std::uint64_t(w_out);
}

std::uint64_t attention_flops(int len, int dim) {
    // QKVO projections: 4 L D^2 MACs; scores + weighted sum: 2 L^2 D MACs
    return 2ull * (4ull * std::uint64_t(len) * std::uint64_t(dim) * std::uint64_t(dim) +
                   2ull * std::uint64_t(len) * std::uint64_t(len) * std::uint64_t(dim));
}

std::uint64_t ffn_flops(int len, int dim, int hidden) {
    return 2ull * 2ull * std::uint64_t(len) * std::uint64_t(dim) * std::uint64_t(hidden);
}

FlopReport count_flops(const ModelConfig& config) {
    config.validate();
    FlopReport report;

    int h = config.input_h, w = config.input_w, ch = 1;
    for (std::size_t i = 0; i < config.backbone.size(); ++i) {
        const auto& block = config.backbone[i];
        const int oh = (h + 2 - 3) / block.stride + 1;
        const int ow = (w + 2 - 3) / block.stride + 1;
        report.backbone_lines.push_back(
            {"block" + std::to_string(i) + ".dw3x3", conv_flops(3, ch, ch, oh, ow, true)});
        report.backbone_lines.push_back(
            {"block" + std::to_string(i) + ".pw1x1", conv_flops(1, ch, block.channels, oh, ow, false)});
        h = oh;
        w = ow;
        ch = block.channels;
    }
    report.backbone_lines.push_back({"proj.fc1", dense_flops(ch, config.embed_dim)});
    report.backbone_lines.push_back({"proj.fc2", dense_flops(config.embed_dim, config.embed_dim)});
    for (const auto& line : report.backbone_lines) report.backbone_per_surface += line.flops;

    const int L = config.queue_len, D = config.embed_dim;
    for (int l = 0; l < config.encoder_layers; ++l) {
        report.encoder_lines.push_back(
            {"l" + std::to_string(l) + ".attention", attention_flops(L, D)});
        report.encoder_lines.push_back(
            {"l" + std::to_string(l) + ".ffn", ffn_flops(L, D, config.ffn_dim)});
    }
    for (const auto& line : report.encoder_lines) report.encoder_per_step += line.flops;

    report.head_per_step = dense_flops(D, config.num_classes);

    // full sequence: one backbone pass per surface, encoder over the growing
    // queue, head on the last token each step
    report.sequence_total = std::uint64_t(L) * (report.backbone_per_surface + report.head_per_step);
    for (int k = 1; k <= L; ++k) {
        std::uint64_t enc = 0;
        for (int l = 0; l < config.encoder_layers; ++l)
            enc += attention_flops(k, D) + ffn_flops(k, D, config.ffn_dim);
        report.sequence_total += enc;
    }
    return report;
}

// ---- throughput -------------------------------------------------------------

namespace {

double percentile(std::vector<double> v, double p) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const double idx = p * double(v.size() - 1);
    const std::size_t lo = std::size_t(idx);
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    const double f = idx - double(lo);
    return v[lo] * (1 - f) + v[hi] * f;
}

TimeSurface random_surface(int h, int w, std::mt19937_64& rng) {
    TimeSurface s;
    s.height = uint16_t(h);
    s.width = uint16_t(w);
    s.values.resize(std::size_t(h) * w);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (auto& v : s.values) v = dist(rng);
    return s;
}

} // namespace

ThroughputReport benchmark_throughput(const ModelParams& params, std::size_t surfaces, int repeats) {
    if (surfaces == 0) throw ConfigError("benchmark_throughput: surfaces must be > 0");
    if (repeats < 3) throw ConfigError("benchmark_throughput: repeats must be >= 3");
    using clock = std::chrono::steady_clock;

    std::mt19937_64 rng(7);
    std::vector<TimeSurface> inputs;
    const std::size_t distinct = std::min<std::size_t>(surfaces, 16);
    for (std::size_t i = 0; i < distinct; ++i)
        inputs.push_back(random_surface(params.config.input_h, params.config.input_w, rng));

    ThroughputReport report;
    report.surfaces = surfaces;
    report.repeats = repeats;

    // warmup
    {
        OnlineState state(params.config);
        for (std::size_t i = 0; i < std::min<std::size_t>(surfaces, 8); ++i)
            push_and_predict(state, extract_features(inputs[i % distinct], params), params);
    }

    std::vector<double> wall;
    std::vector<double> step_ms;
    std::vector<double> fill1_ms, full_ms;
    for (int r = 0; r < repeats; ++r) {
        OnlineState state(params.config);
        const auto t0 = clock::now();
        for (std::size_t i = 0; i < surfaces; ++i) {
            const auto s0 = clock::now();
            auto emb = extract_features(inputs[i % distinct], params);
            push_and_predict(state, std::move(emb), params);
            const double ms = std::chrono::duration<double, std::milli>(clock::now() - s0).count();
            step_ms.push_back(ms);
            if (state.size() == 1) fill1_ms.push_back(ms);
            if (state.size() == state.capacity()) full_ms.push_back(ms);
        }
        wall.push_back(std::chrono::duration<double>(clock::now() - t0).count());
    }
    std::sort(wall.begin(), wall.end());
    report.seconds = wall[wall.size() / 2];
    report.ts_per_s = double(surfaces) / report.seconds;
    report.p50_ms = percentile(step_ms, 0.50);
    report.p99_ms = percentile(step_ms, 0.99);
    report.fill1_ms = percentile(fill1_ms, 0.50);
    report.full_ms = percentile(full_ms, 0.50);

    // queue + encoder only, at full queue, with a precomputed embedding
    {
        OnlineState state(params.config);
        auto emb = extract_features(inputs[0], params);
        for (std::size_t i = 0; i < state.capacity(); ++i) push_and_predict(state, emb, params);
        std::vector<double> enc_ms;
        for (int i = 0; i < 32; ++i) {
            const auto s0 = clock::now();
            push_and_predict(state, emb, params);
            enc_ms.push_back(std::chrono::duration<double, std::milli>(clock::now() - s0).count());
        }
        report.encoder_step_ms = percentile(enc_ms, 0.50);
    }
    return report;
}

// ---- CSV / SVG ------------------------------------------------------------

void write_accuracy_curve_csv(const std::string& path, const AccuracyCurve& curve) {
    std::ofstream f(path);
    if (!f) throw Error("cannot open for write: " + path);
    f << "bin_ms,mean_acc,std_acc,n\n";
    for (std::size_t i = 0; i < curve.bin_end_ms.size(); ++i)
        f << curve.bin_end_ms[i] << ',' << curve.mean_acc[i] << ',' << curve.std_acc[i] << ','
          << curve.n[i] << '\n';
}

void write_confusion_csv(const std::string& path, const std::vector<std::vector<int>>& m) {
    std::ofstream f(path);
    if (!f) throw Error("cannot open for write: " + path);
    for (const auto& row : m) {
        for (std::size_t j = 0; j < row.size(); ++j) f << (j ? "," : "") << row[j];
        f << '\n';
    }
}

std::string render_line_chart_svg(const std::vector<SvgSeries>& series, const std::string& title,
                                  const std::string& x_label, const std::string& y_label) {
    const int W = 640, H = 400, ML = 60, MR = 20, MT = 40, MB = 50;
    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    bool first = true;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (first) {
                xmin = xmax = s.x[i];
                ymin = ymax = s.y[i];
                first = false;
            }
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    const auto px = [&](double x) { return ML + (x - xmin) / (xmax - xmin) * (W - ML - MR); };
    const auto py = [&](double y) { return H - MB - (y - ymin) / (ymax - ymin) * (H - MT - MB); };

    static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
        << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
    out << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    out << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"16\">" << title << "</text>\n";
    // axes
    out << "<line x1=\"" << ML << "\" y1=\"" << H - MB << "\" x2=\"" << W - MR << "\" y2=\""
        << H - MB << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << ML << "\" y1=\"" << MT << "\" x2=\"" << ML << "\" y2=\"" << H - MB
        << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double xv = xmin + (xmax - xmin) * i / 4.0;
        const double yv = ymin + (ymax - ymin) * i / 4.0;
        out << "<text x=\"" << px(xv) << "\" y=\"" << H - MB + 18
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << xv
            << "</text>\n";
        out << "<text x=\"" << ML - 8 << "\" y=\"" << py(yv) + 4
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << yv
            << "</text>\n";
        out << "<line x1=\"" << ML << "\" y1=\"" << py(yv) << "\" x2=\"" << W - MR << "\" y2=\""
            << py(yv) << "\" stroke=\"#dddddd\"/>\n";
    }
    out << "<text x=\"" << (ML + W - MR) / 2 << "\" y=\"" << H - 12
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" << x_label
        << "</text>\n";
    out << "<text x=\"16\" y=\"" << (MT + H - MB) / 2
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 16 "
        << (MT + H - MB) / 2 << ")\">" << y_label << "</text>\n";
    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        out << "<polyline fill=\"none\" stroke=\"" << kColors[si % 6] << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i)
            out << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
        out << "\"/>\n";
        if (!s.label.empty())
            out << "<text x=\"" << W - MR - 8 << "\" y=\"" << MT + 16 * (si + 1)
                << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\" fill=\""
                << kColors[si % 6] << "\">" << s.label << "</text>\n";
    }
    out << "</svg>\n";
    return out.str();
}

void write_accuracy_curve_svg(const std::string& path, const AccuracyCurve& curve) {
    SvgSeries mean{"mean accuracy", {}, {}};
    for (std::size_t i = 0; i < curve.bin_end_ms.size(); ++i) {
        mean.x.push_back(double(curve.bin_end_ms[i]));
        mean.y.push_back(curve.mean_acc[i]);
    }
    const std::string svg =
        render_line_chart_svg({mean}, "Accuracy over time", "time since stream start (ms)", "accuracy");
    std::ofstream f(path);
    if (!f) throw Error("cannot open for write: " + path);
    f << svg;
}

void write_confidence_trace_svg(const std::string& path, const PredictionTrace& trace) {
    std::vector<SvgSeries> series(std::size_t(trace.num_classes));
    for (int c = 0; c < trace.num_classes; ++c) {
        series[c].label = "class " + std::to_string(c);
        for (const auto& step : trace.steps) {
            series[c].x.push_back(double(step.t_ref_us) / 1000.0);
            series[c].y.push_back(double(step.confidence[c]));
        }
    }
    const std::string svg =
        render_line_chart_svg(series, "Class confidence over time", "time (ms)", "confidence");
    std::ofstream f(path);
    if (!f) throw Error("cannot open for write: " + path);
    f << svg;
}

} // namespace evt
