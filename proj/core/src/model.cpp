#include "evt/model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace evt {

int argmax_lowest(const std::vector<float>& v) {
    return int(std::max_element(v.begin(), v.end()) - v.begin());
}

namespace {

nn::TensorF surface_to_input(const TimeSurface& surface) {
    nn::TensorF t({1, 1, surface.height, surface.width});
    for (std::size_t i = 0; i < surface.values.size(); ++i) t.data[i] = float(surface.values[i]);
    return t;
}

std::vector<float> softmax_row(const std::vector<float>& logits) {
    float mx = logits[0];
    for (float v : logits) mx = std::max(mx, v);
    std::vector<float> out(logits.size());
    float sum = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        sum += out[i];
    }
    for (auto& v : out) v /= sum;
    return out;
}

// Attention tensor for step k from a full-sequence [heads x L x L] tensor:
// the leading (k+1)x(k+1) block of each head.
nn::TensorF attention_prefix(const nn::TensorF& full, int heads, int L, int k) {
    const int n = k + 1;
    nn::TensorF out({heads, n, n});
    for (int h = 0; h < heads; ++h)
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                out.data[(std::size_t(h) * n + i) * n + j] =
                    full.data[(std::size_t(h) * L + i) * L + j];
    return out;
}

} // namespace

std::vector<float> extract_features(const TimeSurface& surface, const ModelParams& params,
                                    RunStats* stats) {
    if (surface.height != params.config.input_h || surface.width != params.config.input_w)
        throw DimensionError("extract_features: surface " + std::to_string(surface.height) + "x" +
                             std::to_string(surface.width) + " vs configured " +
                             std::to_string(params.config.input_h) + "x" +
                             std::to_string(params.config.input_w));
    nn::Tape<float> tape(/*grad_enabled=*/false);
    auto input = tape.leaf(surface_to_input(surface));
    auto emb = backbone_forward(tape, params, input);
    if (stats) ++stats->backbone_forwards;
    return tape.value(emb).data;
}

StepPrediction push_and_predict(OnlineState& state, std::vector<float> embedding,
                                const ModelParams& params) {
    if (int(embedding.size()) != params.config.embed_dim)
        throw DimensionError("push_and_predict: embedding size " + std::to_string(embedding.size()) +
                             " vs embed_dim " + std::to_string(params.config.embed_dim));
    state.push(std::move(embedding));

    const int L = int(state.size());
    const int D = params.config.embed_dim;
    nn::TensorF tokens({L, D});
    {
        int r = 0;
        for (const auto& e : state.queue()) {
            std::copy(e.begin(), e.end(), tokens.data.begin() + std::size_t(r) * D);
            ++r;
        }
    }
    nn::Tape<float> tape(/*grad_enabled=*/false);
    auto tok = tape.leaf(std::move(tokens));
    auto enc = temporal_forward(tape, params, tok);
    auto last = tape.slice_rows(enc.encoded, L - 1, L);
    auto logits = head_forward(tape, params, last);

    StepPrediction step;
    step.confidence = softmax_row(tape.value(logits).data);
    step.predicted = argmax_lowest(step.confidence);
    step.attention = std::move(enc.attention);
    state.record(step.confidence);
    return step;
}

std::vector<StepPrediction> predict_offline(const std::vector<std::vector<float>>& embeddings,
                                            const ModelParams& params) {
    const int L = int(embeddings.size());
    if (L < 1) throw DimensionError("predict_offline: empty embedding sequence");
    if (L > params.config.queue_len)
        throw DimensionError("predict_offline: sequence length " + std::to_string(L) +
                             " exceeds queue_len " + std::to_string(params.config.queue_len) +
                             "; caller must window");
    const int D = params.config.embed_dim;
    nn::TensorF tokens({L, D});
    for (int r = 0; r < L; ++r) {
        if (int(embeddings[r].size()) != D)
            throw DimensionError("predict_offline: embedding " + std::to_string(r) + " size " +
                                 std::to_string(embeddings[r].size()) + " vs embed_dim " +
                                 std::to_string(D));
        std::copy(embeddings[r].begin(), embeddings[r].end(), tokens.data.begin() + std::size_t(r) * D);
    }
    nn::Tape<float> tape(/*grad_enabled=*/false);
    auto tok = tape.leaf(std::move(tokens));
    auto enc = temporal_forward(tape, params, tok);
    auto logits = head_forward(tape, params, enc.encoded); // [L x C]
    const auto& lv = tape.value(logits);
    const int C = params.config.num_classes;

    std::vector<StepPrediction> steps(L);
    for (int k = 0; k < L; ++k) {
        std::vector<float> row(lv.data.begin() + std::size_t(k) * C,
                               lv.data.begin() + std::size_t(k + 1) * C);
        steps[k].confidence = softmax_row(row);
        steps[k].predicted = argmax_lowest(steps[k].confidence);
        steps[k].attention = attention_prefix(enc.attention, params.config.heads, L, k);
    }
    return steps;
}

void reset_state(OnlineState& state) { state.reset(); }

PredictionTrace run_stream(const EventStream& stream, const ModelParams& params,
                           const PipelineConfig& cfg, RunStats* stats) {
    require_valid(stream);
    const EventStream filtered = cfg.apply_filter ? filter_isolated(stream, cfg.filter) : stream;
    std::size_t horizon = cfg.horizon;
    // horizon from the raw stream duration, so filtering the last events away
    // does not shorten the trace
    if (horizon == 0) horizon = std::size_t(stream.duration_us() / cfg.decay.cadence_us);

    PredictionTrace trace;
    trace.num_classes = params.config.num_classes;
    trace.heads = params.config.heads;
    if (horizon == 0) return trace;

    const auto surfaces = surface_sequence(filtered, cfg.decay, horizon);
    if (stats) stats->surfaces_built += surfaces.size();
    OnlineState state(params.config);
    for (const auto& s : surfaces) {
        const TimeSurface resized =
            resize_surface(s, uint16_t(params.config.input_h), uint16_t(params.config.input_w));
        auto emb = extract_features(resized, params, stats);
        StepPrediction step = push_and_predict(state, std::move(emb), params);
        trace.steps.push_back({s.t_ref, std::move(step.confidence), step.predicted,
                               std::move(step.attention)});
    }
    return trace;
}

// ---- trace CSV -----------------------------------------------------------

void write_trace_csv(const std::string& path, const PredictionTrace& trace) {
    std::ofstream f(path);
    if (!f) throw Error("cannot open for write: " + path);
    f << "t_ms";
    for (int c = 0; c < trace.num_classes; ++c) f << ",conf_c" << c;
    f << ",argmax\n";
    char buf[64];
    for (const auto& step : trace.steps) {
        f << (double(step.t_ref_us) / 1000.0);
        for (float v : step.confidence) {
            std::snprintf(buf, sizeof buf, "%.9g", double(v));
            f << ',' << buf;
        }
        f << ',' << step.predicted << '\n';
    }
}

PredictionTrace read_trace_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error("cannot open: " + path);
    std::string line;
    if (!std::getline(f, line)) throw ParseError("trace csv: missing header", 0);
    int num_classes = 0;
    {
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, ','))
            if (col.rfind("conf_c", 0) == 0) ++num_classes;
    }
    if (num_classes == 0) throw ParseError("trace csv: no conf_c columns", 0);

    PredictionTrace trace;
    trace.num_classes = num_classes;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        TraceEntry e;
        if (!std::getline(ss, cell, ',')) throw ParseError("trace csv: short row", 0);
        e.t_ref_us = uint64_t(std::stod(cell) * 1000.0 + 0.5);
        for (int c = 0; c < num_classes; ++c) {
            if (!std::getline(ss, cell, ',')) throw ParseError("trace csv: short row", 0);
            e.confidence.push_back(std::stof(cell));
        }
        if (!std::getline(ss, cell, ',')) throw ParseError("trace csv: missing argmax", 0);
        e.predicted = std::stoi(cell);
        trace.steps.push_back(std::move(e));
    }
    return trace;
}

// ---- ATT1 ----------------------------------------------------------------

AttentionRecord export_attention(const PredictionTrace& trace, int head, int step) {
    if (trace.steps.empty()) throw ValidationError("export_attention: empty trace");
    if (head < 0 || head >= trace.heads)
        throw ConfigError("export_attention: head " + std::to_string(head) + " out of range [0," +
                          std::to_string(trace.heads) + ")");
    const int idx = step < 0 ? int(trace.steps.size()) - 1 : step;
    if (idx >= int(trace.steps.size()))
        throw ConfigError("export_attention: step " + std::to_string(step) + " out of range");
    const auto& att = trace.steps[idx].attention; // [heads x L x L]
    const int L = att.shape[1];
    AttentionRecord rec;
    rec.step = uint32_t(idx);
    rec.head = uint8_t(head);
    rec.matrix = nn::TensorF({L, L});
    std::copy(att.data.begin() + std::size_t(head) * L * L,
              att.data.begin() + std::size_t(head + 1) * L * L, rec.matrix.data.begin());
    return rec;
}

std::vector<uint8_t> encode_attention(const AttentionRecord& rec) {
    std::vector<uint8_t> out = {'A', 'T', 'T', '1'};
    for (int i = 0; i < 4; ++i) out.push_back(uint8_t(rec.step >> (8 * i)));
    out.push_back(rec.head);
    const uint16_t L = uint16_t(rec.matrix.shape[0]);
    out.push_back(uint8_t(L));
    out.push_back(uint8_t(L >> 8));
    for (float v : rec.matrix.data) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        for (int i = 0; i < 4; ++i) out.push_back(uint8_t(bits >> (8 * i)));
    }
    return out;
}

AttentionRecord decode_attention(const std::vector<uint8_t>& bytes, std::size_t& offset) {
    if (offset + 11 > bytes.size()) throw ParseError("ATT1: truncated header", offset);
    if (std::memcmp(bytes.data() + offset, "ATT1", 4) != 0) throw ParseError("ATT1: bad magic", offset);
    AttentionRecord rec;
    rec.step = 0;
    for (int i = 0; i < 4; ++i) rec.step |= uint32_t(bytes[offset + 4 + i]) << (8 * i);
    rec.head = bytes[offset + 8];
    const uint16_t L = uint16_t(bytes[offset + 9]) | uint16_t(bytes[offset + 10]) << 8;
    rec.matrix = nn::TensorF({L, L});
    const std::size_t need = offset + 11 + 4 * std::size_t(L) * L;
    if (need > bytes.size()) throw ParseError("ATT1: truncated matrix", offset + 11);
    for (std::size_t i = 0; i < std::size_t(L) * L; ++i) {
        uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= uint32_t(bytes[offset + 11 + 4 * i + b]) << (8 * b);
        std::memcpy(&rec.matrix.data[i], &bits, 4);
    }
    offset = need;
    return rec;
}

void write_attention_file(const std::string& path, const PredictionTrace& trace) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open for write: " + path);
    for (std::size_t k = 0; k < trace.steps.size(); ++k)
        for (int h = 0; h < trace.heads; ++h) {
            const auto rec = export_attention(trace, h, int(k));
            const auto bytes = encode_attention(rec);
            f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
        }
}

std::vector<AttentionRecord> read_attention_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    std::vector<AttentionRecord> out;
    std::size_t off = 0;
    while (off < bytes.size()) out.push_back(decode_attention(bytes, off));
    return out;
}

// ---- checkpoint with embedded config ---------------------------------------

namespace {
constexpr const char* kConfigTensor = "config/v1";
}

void save_model(const std::string& path, const ModelParams& params) {
    nn::ParamStore<float> store;
    std::vector<float> cfg = {
        float(params.config.input_h),    float(params.config.input_w),
        float(params.config.embed_dim),  float(params.config.heads),
        float(params.config.encoder_layers), float(params.config.queue_len),
        float(params.config.num_classes), float(params.config.ffn_dim),
        float(params.config.backbone.size())};
    for (const auto& b : params.config.backbone) {
        cfg.push_back(float(b.channels));
        cfg.push_back(float(b.stride));
    }
    store.add(kConfigTensor, nn::TensorF({int(cfg.size())}, cfg));
    for (const auto& e : params.store) store.add(e.name, e.value);
    nn::save_params(path, store);
}

ModelParams load_model(const std::string& path) {
    const auto raw = nn::load_params(path);
    const int cfg_id = raw.find(kConfigTensor);
    if (cfg_id < 0) throw ParseError("model file lacks " + std::string(kConfigTensor) + " tensor", 0);
    const auto& cfg = raw.entry(cfg_id).value.data;
    if (cfg.size() < 9) throw ParseError("model config tensor too short", 0);
    ModelParams m;
    m.config.input_h = int(cfg[0]);
    m.config.input_w = int(cfg[1]);
    m.config.embed_dim = int(cfg[2]);
    m.config.heads = int(cfg[3]);
    m.config.encoder_layers = int(cfg[4]);
    m.config.queue_len = int(cfg[5]);
    m.config.num_classes = int(cfg[6]);
    m.config.ffn_dim = int(cfg[7]);
    const int nblocks = int(cfg[8]);
    if (int(cfg.size()) != 9 + 2 * nblocks) throw ParseError("model config tensor malformed", 0);
    m.config.backbone.clear();
    for (int i = 0; i < nblocks; ++i)
        m.config.backbone.push_back({int(cfg[9 + 2 * i]), int(cfg[10 + 2 * i])});
    m.config.validate();
    for (const auto& e : raw)
        if (e.name != kConfigTensor) m.store.add(e.name, e.value);
    return m;
}

} // namespace evt
