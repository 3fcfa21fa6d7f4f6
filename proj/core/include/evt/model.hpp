#pragma once

#include "evt/nn/adam.hpp"
#include "evt/nn/tape.hpp"
#include "evt/time_surface.hpp"

#include <cstdint>
#include <deque>
#include <random>
#include <string>
#include <vector>

namespace evt {

// ---- configuration -----------------------------------------------------

struct BackboneBlock {
    int channels;
    int stride; // 1 or 2
};

// Single-encoder-layer predictive model: separable-conv backbone, dense
// projection to embed_dim, sliding feature queue, causal multi-head
// encoder, dense classifier on the last token.
struct ModelConfig {
    int input_h = 144;
    int input_w = 144;
    int embed_dim = 256;
    int heads = 4;
    int encoder_layers = 1;
    int queue_len = 60;
    int num_classes = 30;
    int ffn_dim = 512;
    std::vector<BackboneBlock> backbone = default_backbone();

    static std::vector<BackboneBlock> default_backbone() {
        return {{16, 2}, {24, 1}, {32, 2}, {48, 1}, {64, 2}, {96, 1}, {128, 2}};
    }

    void validate() const {
        if (embed_dim <= 0 || heads <= 0 || embed_dim % heads != 0)
            throw ConfigError("embed_dim " + std::to_string(embed_dim) +
                              " not divisible by heads " + std::to_string(heads));
        if (queue_len < 1) throw ConfigError("queue_len must be >= 1");
        if (encoder_layers < 1) throw ConfigError("encoder_layers must be >= 1");
        if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
        if (input_h < 4 || input_w < 4) throw ConfigError("input size too small");
        if (ffn_dim < 1) throw ConfigError("ffn_dim must be >= 1");
        if (backbone.empty()) throw ConfigError("backbone must have at least one block");
        for (const auto& b : backbone)
            if (b.channels < 1 || (b.stride != 1 && b.stride != 2))
                throw ConfigError("backbone block channels/stride out of range");
    }
};

template <typename T>
struct ModelParamsT {
    ModelConfig config;
    nn::ParamStore<T> store;
};
using ModelParams = ModelParamsT<float>;

// True for classifier-head parameters; the freeze boundary for head-only
// training stages.
inline bool is_head_param(const std::string& name) { return name.rfind("head.", 0) == 0; }

// ---- initialization ------------------------------------------------------

namespace detail {
template <typename T>
nn::Tensor<T> randn(nn::Shape shape, double stddev, std::mt19937_64& rng) {
    nn::Tensor<T> t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t.data) v = T(dist(rng));
    return t;
}
template <typename T>
nn::Tensor<T> constant(nn::Shape shape, T value) {
    nn::Tensor<T> t(std::move(shape));
    std::fill(t.data.begin(), t.data.end(), value);
    return t;
}
} // namespace detail

// He-style init for conv/ReLU layers, Xavier for projections and attention,
// affine norms at identity. The classifier head starts at zero so an
// untrained model outputs uniform confidences (initial loss = ln C).
template <typename T>
ModelParamsT<T> init_model(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    ModelParamsT<T> m;
    m.config = cfg;
    std::mt19937_64 rng(seed);
    auto& s = m.store;

    int ch = 1;
    for (std::size_t i = 0; i < cfg.backbone.size(); ++i) {
        const std::string p = "backbone.block" + std::to_string(i) + ".";
        const int out = cfg.backbone[i].channels;
        s.add(p + "dw", detail::randn<T>({ch, 3, 3}, std::sqrt(2.0 / 9.0), rng));
        s.add(p + "dw_norm.gamma", detail::constant<T>({ch}, T(1)));
        s.add(p + "dw_norm.beta", detail::constant<T>({ch}, T(0)));
        s.add(p + "pw", detail::randn<T>({out, ch}, std::sqrt(2.0 / ch), rng));
        s.add(p + "pw_norm.gamma", detail::constant<T>({out}, T(1)));
        s.add(p + "pw_norm.beta", detail::constant<T>({out}, T(0)));
        ch = out;
    }
    const int D = cfg.embed_dim;
    s.add("proj.fc1.W", detail::randn<T>({ch, D}, std::sqrt(2.0 / ch), rng));
    s.add("proj.fc1.b", detail::constant<T>({D}, T(0)));
    s.add("proj.fc2.W", detail::randn<T>({D, D}, std::sqrt(1.0 / D), rng));
    s.add("proj.fc2.b", detail::constant<T>({D}, T(0)));

    for (int l = 0; l < cfg.encoder_layers; ++l) {
        const std::string p = "encoder.l" + std::to_string(l) + ".";
        s.add(p + "ln1.gamma", detail::constant<T>({D}, T(1)));
        s.add(p + "ln1.beta", detail::constant<T>({D}, T(0)));
        for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"})
            s.add(p + w, detail::randn<T>({D, D}, std::sqrt(1.0 / D), rng));
        for (const char* b : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"})
            s.add(p + b, detail::constant<T>({D}, T(0)));
        s.add(p + "ln2.gamma", detail::constant<T>({D}, T(1)));
        s.add(p + "ln2.beta", detail::constant<T>({D}, T(0)));
        s.add(p + "ff.W1", detail::randn<T>({D, cfg.ffn_dim}, std::sqrt(2.0 / D), rng));
        s.add(p + "ff.b1", detail::constant<T>({cfg.ffn_dim}, T(0)));
        s.add(p + "ff.W2", detail::randn<T>({cfg.ffn_dim, D}, std::sqrt(1.0 / cfg.ffn_dim), rng));
        s.add(p + "ff.b2", detail::constant<T>({D}, T(0)));
    }
    s.add("head.W", detail::constant<T>({D, cfg.num_classes}, T(0)));
    s.add("head.b", detail::constant<T>({cfg.num_classes}, T(0)));
    return m;
}

// Replaces the classifier head with a freshly zero-initialized one sized for
// `num_classes`; everything else carries over (transfer between label sets).
template <typename T>
ModelParamsT<T> with_fresh_head(const ModelParamsT<T>& src, int num_classes) {
    ModelParamsT<T> out;
    out.config = src.config;
    out.config.num_classes = num_classes;
    for (const auto& e : src.store)
        if (!is_head_param(e.name)) out.store.add(e.name, e.value);
    out.store.add("head.W", detail::constant<T>({src.config.embed_dim, num_classes}, T(0)));
    out.store.add("head.b", detail::constant<T>({num_classes}, T(0)));
    return out;
}

// ---- forward builders -----------------------------------------------------

// Multi-head causal self-attention over [L x D] tokens. Returns the encoded
// tokens and a [heads x L x L] copy of the attention rows.
template <typename T>
struct MhaParams {
    nn::Var<T> wq, bq, wk, bk, wv, bv, wo, bo;
};

template <typename T>
struct MhaResult {
    nn::Var<T> out;
    nn::Tensor<T> attention; // [heads x L x L]
};

template <typename T>
MhaResult<T> mha_forward(nn::Tape<T>& tape, nn::Var<T> tokens, const MhaParams<T>& p,
                         int heads, const nn::Tensor<T>* mask = nullptr) {
    const auto& shape = tape.shape(tokens);
    if (shape.size() != 2) throw DimensionError("mha: want 2-D tokens, got " + nn::shape_str(shape));
    const int L = shape[0], D = shape[1];
    if (heads < 1 || D % heads != 0)
        throw ConfigError("mha: dim " + std::to_string(D) + " not divisible by " +
                          std::to_string(heads) + " heads");
    const int dk = D / heads;

    auto q = tape.dense(tokens, p.wq, p.bq);
    auto k = tape.dense(tokens, p.wk, p.bk);
    auto v = tape.dense(tokens, p.wv, p.bv);

    MhaResult<T> result;
    result.attention = nn::Tensor<T>({heads, L, L});
    std::vector<nn::Var<T>> head_outs;
    head_outs.reserve(heads);
    for (int h = 0; h < heads; ++h) {
        auto qh = tape.slice_cols(q, h * dk, (h + 1) * dk);
        auto kh = tape.slice_cols(k, h * dk, (h + 1) * dk);
        auto vh = tape.slice_cols(v, h * dk, (h + 1) * dk);
        auto scores = tape.scale(tape.matmul_nt(qh, kh), T(1) / std::sqrt(T(dk)));
        auto attn = tape.masked_softmax_rows(scores, mask);
        std::copy(tape.value(attn).data.begin(), tape.value(attn).data.end(),
                  result.attention.data.begin() + std::size_t(h) * L * L);
        head_outs.push_back(tape.matmul(attn, vh));
    }
    result.out = tape.dense(tape.concat_cols(head_outs), p.wo, p.bo);
    return result;
}

// Backbone over one surface [1 x 1 x H x W] -> projected embedding [1 x D].
// No cross-surface state: pure function of its input.
template <typename T>
nn::Var<T> backbone_forward(nn::Tape<T>& tape, const ModelParamsT<T>& m, nn::Var<T> input) {
    const auto& shape = tape.shape(input);
    if (shape.size() != 4 || shape[2] != m.config.input_h || shape[3] != m.config.input_w)
        throw DimensionError("backbone: input " + nn::shape_str(shape) + " vs configured " +
                             std::to_string(m.config.input_h) + "x" + std::to_string(m.config.input_w));
    auto& s = m.store;
    auto x = input;
    for (std::size_t i = 0; i < m.config.backbone.size(); ++i) {
        const std::string p = "backbone.block" + std::to_string(i) + ".";
        x = tape.conv_dw3x3(x, tape.param(s, s.id(p + "dw")), m.config.backbone[i].stride);
        x = tape.scale_bias(x, tape.param(s, s.id(p + "dw_norm.gamma")), tape.param(s, s.id(p + "dw_norm.beta")));
        x = tape.relu6(x);
        x = tape.conv_pw(x, tape.param(s, s.id(p + "pw")));
        x = tape.scale_bias(x, tape.param(s, s.id(p + "pw_norm.gamma")), tape.param(s, s.id(p + "pw_norm.beta")));
        x = tape.relu6(x);
    }
    auto pooled = tape.global_avg_pool(x); // [1 x C]
    auto f1 = tape.relu(tape.dense(pooled, tape.param(s, s.id("proj.fc1.W")), tape.param(s, s.id("proj.fc1.b"))));
    return tape.dense(f1, tape.param(s, s.id("proj.fc2.W")), tape.param(s, s.id("proj.fc2.b")));
}

template <typename T>
struct EncoderResult {
    nn::Var<T> encoded;          // [L x D]
    nn::Tensor<T> attention;     // [heads x L x L], first encoder layer
};

// Positional encoding by position-in-queue, then pre-norm encoder layers
// under a causal mask.
template <typename T>
EncoderResult<T> temporal_forward(nn::Tape<T>& tape, const ModelParamsT<T>& m, nn::Var<T> tokens) {
    const auto& shape = tape.shape(tokens);
    if (shape.size() != 2 || shape[1] != m.config.embed_dim)
        throw DimensionError("encoder: tokens " + nn::shape_str(shape) + " vs embed_dim " +
                             std::to_string(m.config.embed_dim));
    const int L = shape[0];
    auto& s = m.store;
    const auto pe = nn::positional_encoding<T>(L, m.config.embed_dim);
    const auto mask = nn::causal_mask<T>(L);

    auto x = tape.add_const(tokens, pe);
    EncoderResult<T> result;
    for (int l = 0; l < m.config.encoder_layers; ++l) {
        const std::string p = "encoder.l" + std::to_string(l) + ".";
        auto h = tape.layer_norm(x, tape.param(s, s.id(p + "ln1.gamma")), tape.param(s, s.id(p + "ln1.beta")));
        MhaParams<T> mp{
            tape.param(s, s.id(p + "attn.wq")), tape.param(s, s.id(p + "attn.bq")),
            tape.param(s, s.id(p + "attn.wk")), tape.param(s, s.id(p + "attn.bk")),
            tape.param(s, s.id(p + "attn.wv")), tape.param(s, s.id(p + "attn.bv")),
            tape.param(s, s.id(p + "attn.wo")), tape.param(s, s.id(p + "attn.bo"))};
        auto attn = mha_forward(tape, h, mp, m.config.heads, &mask);
        if (l == 0) result.attention = std::move(attn.attention);
        x = tape.add(x, attn.out);
        auto h2 = tape.layer_norm(x, tape.param(s, s.id(p + "ln2.gamma")), tape.param(s, s.id(p + "ln2.beta")));
        auto ff1 = tape.relu(tape.dense(h2, tape.param(s, s.id(p + "ff.W1")), tape.param(s, s.id(p + "ff.b1"))));
        auto ff2 = tape.dense(ff1, tape.param(s, s.id(p + "ff.W2")), tape.param(s, s.id(p + "ff.b2")));
        x = tape.add(x, ff2);
    }
    result.encoded = x;
    return result;
}

template <typename T>
nn::Var<T> head_forward(nn::Tape<T>& tape, const ModelParamsT<T>& m, nn::Var<T> x) {
    auto& s = m.store;
    return tape.dense(x, tape.param(s, s.id("head.W")), tape.param(s, s.id("head.b")));
}

// ---- online inference -----------------------------------------------------

struct RunStats {
    std::size_t backbone_forwards = 0;
    std::size_t surfaces_built = 0;
};

struct StepPrediction {
    std::vector<float> confidence;  // sums to 1
    int predicted = 0;              // argmax, ties to lowest index
    nn::TensorF attention;          // [heads x L x L] at this step's queue length
};

struct TraceEntry {
    uint64_t t_ref_us = 0;
    std::vector<float> confidence;
    int predicted = 0;
    nn::TensorF attention;
};

struct PredictionTrace {
    int num_classes = 0;
    int heads = 0;
    std::vector<TraceEntry> steps;
};

// Sliding queue of embeddings plus the step counter; single-owner.
class OnlineState {
public:
    explicit OnlineState(const ModelConfig& cfg)
        : queue_len_(cfg.queue_len), embed_dim_(cfg.embed_dim) {}

    std::size_t size() const { return queue_.size(); }
    std::size_t steps_seen() const { return steps_seen_; }
    std::size_t capacity() const { return std::size_t(queue_len_); }
    int embed_dim() const { return embed_dim_; }
    const std::deque<std::vector<float>>& queue() const { return queue_; }
    const std::vector<float>& last_prediction() const { return last_prediction_; }

    void push(std::vector<float> embedding) {
        queue_.push_back(std::move(embedding));
        if (queue_.size() > std::size_t(queue_len_)) queue_.pop_front();
        ++steps_seen_;
    }
    void record(std::vector<float> conf) { last_prediction_ = std::move(conf); }
    void reset() {
        queue_.clear();
        steps_seen_ = 0;
        last_prediction_.clear();
    }

private:
    int queue_len_;
    int embed_dim_;
    std::deque<std::vector<float>> queue_;
    std::size_t steps_seen_ = 0;
    std::vector<float> last_prediction_;
};

int argmax_lowest(const std::vector<float>& v);

// Backbone + projection on one resized surface; counts into stats when given.
std::vector<float> extract_features(const TimeSurface& surface, const ModelParams& params,
                                    RunStats* stats = nullptr);

StepPrediction push_and_predict(OnlineState& state, std::vector<float> embedding,
                                const ModelParams& params);

std::vector<StepPrediction> predict_offline(const std::vector<std::vector<float>>& embeddings,
                                            const ModelParams& params);

void reset_state(OnlineState& state);

struct PipelineConfig {
    DecayConfig decay;
    FilterConfig filter;
    bool apply_filter = true;
    std::size_t horizon = 0; // 0 = floor(stream duration / cadence)
};

PredictionTrace run_stream(const EventStream& stream, const ModelParams& params,
                           const PipelineConfig& cfg, RunStats* stats = nullptr);

// ---- trace / attention serialization ---------------------------------------

// Trace CSV columns: t_ms, conf_c0..conf_c{K-1}, argmax
void write_trace_csv(const std::string& path, const PredictionTrace& trace);
PredictionTrace read_trace_csv(const std::string& path);

// ATT1 record: "ATT1" | step:u32 | head:u8 | L:u16 | L*L f32 row-major, LE.
struct AttentionRecord {
    uint32_t step = 0;
    uint8_t head = 0;
    nn::TensorF matrix; // [L x L]
};

// Lower-triangular row-stochastic matrix for one head; step -1 = last step.
AttentionRecord export_attention(const PredictionTrace& trace, int head, int step = -1);

std::vector<uint8_t> encode_attention(const AttentionRecord& rec);
AttentionRecord decode_attention(const std::vector<uint8_t>& bytes, std::size_t& offset);
void write_attention_file(const std::string& path, const PredictionTrace& trace);
std::vector<AttentionRecord> read_attention_file(const std::string& path);

// ---- checkpoint with embedded config ---------------------------------------

void save_model(const std::string& path, const ModelParams& params);
ModelParams load_model(const std::string& path);

} // namespace evt
