#pragma once

#include "evt/model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace evt {

// ---- online-prediction evaluation ----------------------------------------

struct AccuracyCurve {
    std::vector<uint64_t> bin_end_ms; // strictly increasing bin upper edges
    std::vector<double> mean_acc;     // in [0, 1]
    std::vector<double> std_acc;      // across traces in the bin
    std::vector<int> n;               // traces contributing to the bin
};

// Per time bin, the fraction of traces whose argmax at that time equals the
// label. Traces shorter than a bin are excluded from it.
AccuracyCurve accuracy_over_time(const std::vector<std::pair<PredictionTrace, int>>& traces,
                                 uint64_t bin_ms);

// Entry (true, predicted) counts from each trace's final step.
std::vector<std::vector<int>> confusion_matrix(
    const std::vector<std::pair<PredictionTrace, int>>& traces, int num_classes);

// ---- analytical FLOP counting ---------------------------------------------
// Convention: 1 MAC = 2 FLOPs (multiplies and adds both counted).
//   conv:      2 * K*K * C_in * C_out * H_out * W_out   (/ C_out if depthwise)
//   dense:     2 * D_in * D_out
//   attention: 2 * (4*L*D^2 + 2*L^2*D) per step
//   ffn:       2 * 2 * L * D * F per step
// The formula sheet lives in docs/flops.md.

struct FlopLine {
    std::string name;
    std::uint64_t flops;
};

struct FlopReport {
    std::vector<FlopLine> backbone_lines;   // per layer, one surface
    std::vector<FlopLine> encoder_lines;    // one step at L = queue_len
    std::uint64_t backbone_per_surface = 0;
    std::uint64_t encoder_per_step = 0;     // at full queue
    std::uint64_t head_per_step = 0;
    std::uint64_t sequence_total = 0;       // queue_len steps with growing queue
};

std::uint64_t dense_flops(int d_in, int d_out);
std::uint64_t conv_flops(int k, int c_in, int c_out, int h_out, int w_out, bool depthwise = false);
std::uint64_t attention_flops(int len, int dim);
std::uint64_t ffn_flops(int len, int dim, int hidden);

FlopReport count_flops(const ModelConfig& config);

// ---- wall-clock throughput ---------------------------------------------

struct ThroughputReport {
    std::size_t surfaces = 0;
    int repeats = 0;
    double seconds = 0.0;        // median wall-clock over repeats
    double ts_per_s = 0.0;       // surfaces / seconds
    double p50_ms = 0.0;         // per-step latency percentiles
    double p99_ms = 0.0;
    double fill1_ms = 0.0;       // per-step latency at queue fill 1
    double full_ms = 0.0;        // per-step latency at full queue
    double encoder_step_ms = 0.0; // queue+encoder only, full queue
};

// End-to-end per-surface cost (extract + push_and_predict) over synthetic
// random surfaces; median across repeats after a warmup pass.
ThroughputReport benchmark_throughput(const ModelParams& params, std::size_t surfaces, int repeats);

// ---- CSV / SVG emission ------------------------------------------------

// AccuracyCurve CSV: bin_ms, mean_acc, std_acc, n
void write_accuracy_curve_csv(const std::string& path, const AccuracyCurve& curve);
void write_confusion_csv(const std::string& path, const std::vector<std::vector<int>>& m);

// Static SVG line chart; one polyline per series over a shared x axis.
struct SvgSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};
std::string render_line_chart_svg(const std::vector<SvgSeries>& series, const std::string& title,
                                  const std::string& x_label, const std::string& y_label);
void write_accuracy_curve_svg(const std::string& path, const AccuracyCurve& curve);
void write_confidence_trace_svg(const std::string& path, const PredictionTrace& trace);

} // namespace evt
