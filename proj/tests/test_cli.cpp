// End-to-end tests against the built evt binary. EVT_CLI_PATH is injected by
// CMake; everything runs inside a temp directory.

#include "evt/event_codec.hpp"
#include "evt/model.hpp"
#include "evt/synthetic.hpp"
#include "evt/time_surface.hpp"

#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace evt;
namespace fs = std::filesystem;

namespace {

const std::string kCli = EVT_CLI_PATH;

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("evt_cli_test_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

int run(const std::string& args) {
    const std::string cmd = kCli + " " + args + " 2>/dev/null";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
    std::ifstream f(path);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

int count_lines(const std::string& text) {
    int n = 0;
    for (char c : text)
        if (c == '\n') ++n;
    return n;
}

// tiny model the CLI tests can train/infer with quickly
std::string write_tiny_model_config(const TempDir& dir) {
    const auto path = dir.file("model.cfg");
    std::ofstream f(path);
    f << "input_h = 24\ninput_w = 24\nembed_dim = 16\nheads = 4\n"
      << "queue_len = 8\nnum_classes = 4\nffn_dim = 24\nbackbone = 4:2,8:2\n";
    return path;
}

std::string write_model_file(const TempDir& dir) {
    ModelConfig cfg;
    cfg.input_h = 24;
    cfg.input_w = 24;
    cfg.embed_dim = 16;
    cfg.heads = 4;
    cfg.queue_len = 8;
    cfg.num_classes = 4;
    cfg.ffn_dim = 24;
    cfg.backbone = {{4, 2}, {8, 2}};
    auto m = init_model<float>(cfg, 5);
    // nudge the head so confidences depend on the input
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<float> dist(-0.3f, 0.3f);
    for (auto& v : m.store.entry("head.W").value.data) v = dist(rng);
    const auto path = dir.file("model.nnp1");
    save_model(path, m);
    return path;
}

} // namespace

TEST_CASE("cli: no arguments prints usage and exits 1") {
    CHECK(run("") == 1);
    CHECK(run("frobnicate") == 1);
}

TEST_CASE("cli: synth is byte-deterministic for a fixed seed") {
    TempDir dir;
    const auto a = dir.file("a.evs1");
    const auto b = dir.file("b.evs1");
    REQUIRE(run("synth --pattern cyclic_horizontal --seed 7 --out " + a) == 0);
    REQUIRE(run("synth --pattern cyclic_horizontal --seed 7 --out " + b) == 0);
    CHECK(read_file_bytes(a) == read_file_bytes(b));
    REQUIRE(run("synth --pattern cyclic_horizontal --seed 8 --out " + b) == 0);
    CHECK(read_file_bytes(a) != read_file_bytes(b));
}

TEST_CASE("cli: convert round-trips csv and binary") {
    TempDir dir;
    const auto evs = dir.file("s.evs1");
    const auto csv = dir.file("s.csv");
    const auto back = dir.file("back.evs1");
    REQUIRE(run("synth --seed 3 --duration 0.2 --rate 2000 --width 32 --height 32 --out " + evs) == 0);
    REQUIRE(run("convert --input " + evs + " --out " + csv) == 0);
    REQUIRE(run("convert --input " + csv + " --width 32 --height 32 --out " + back) == 0);
    CHECK(read_file_bytes(evs) == read_file_bytes(back));
}

TEST_CASE("cli: malformed input yields exit 2") {
    TempDir dir;
    const auto bad = dir.file("bad.evs1");
    std::ofstream(bad) << "this is not an event stream";
    CHECK(run("convert --input " + bad + " --out " + dir.file("out.csv")) == 2);
}

TEST_CASE("cli: filter and surfaces produce expected record counts") {
    TempDir dir;
    const auto raw = dir.file("raw.evs1");
    const auto kept = dir.file("kept.evs1");
    REQUIRE(run("synth --seed 11 --duration 0.5 --rate 4000 --noise-rate 100 --out " + raw) == 0);
    REQUIRE(run("filter --input " + raw + " --out " + kept) == 0);
    const auto before = read_stream_file(raw);
    const auto after = read_stream_file(kept);
    CHECK(after.events.size() < before.events.size());
    CHECK(after.events.size() > before.events.size() / 2);

    const auto tsf = dir.file("surf.tsf");
    REQUIRE(run("surfaces --input " + kept + " --cadence-us 50000 --out " + tsf) == 0);
    const auto surfaces = read_surfaces_file(tsf);
    CHECK(surfaces.size() == read_stream_file(kept).duration_us() / 50000);
}

TEST_CASE("cli: infer writes one trace row per surface") {
    TempDir dir;
    const auto model = write_model_file(dir);
    const auto stream = dir.file("s.evs1");
    const auto trace = dir.file("trace.csv");
    // 2 s at 33 ms cadence -> 60 rows
    REQUIRE(run("synth --seed 2 --duration 2.0 --rate 3000 --width 48 --height 48 --out " + stream) == 0);
    REQUIRE(run("infer --model " + model + " --input " + stream + " --out " + trace) == 0);
    const auto text = slurp(trace);
    CHECK(count_lines(text) == 61); // header + 60 steps
    CHECK(text.rfind("t_ms,conf_c0,conf_c1,conf_c2,conf_c3,argmax", 0) == 0);

    const auto att = dir.file("run.att");
    const auto mat = dir.file("att.csv");
    REQUIRE(run("infer --model " + model + " --input " + stream + " --out " + trace +
                " --attn-out " + att) == 0);
    REQUIRE(run("attn --input " + att + " --head 2 --out " + mat) == 0);
    CHECK(count_lines(slurp(mat)) == 8); // queue_len rows at the final step
    CHECK(run("attn --input " + att + " --head 9 --out " + mat) == 2);
}

TEST_CASE("cli: stream infer over a pipe equals batch infer") {
    TempDir dir;
    const auto model = write_model_file(dir);
    const auto stream_path = dir.file("s.evs1");
    REQUIRE(run("synth --seed 13 --duration 1.0 --rate 2000 --width 48 --height 48 --out " +
                stream_path) == 0);

    const auto batch_trace = dir.file("batch.csv");
    REQUIRE(run("infer --model " + model + " --input " + stream_path + " --out " + batch_trace) == 0);

    // frame the same bytes as length-prefixed chunks of one record each
    const auto bytes = read_file_bytes(stream_path);
    const auto framed = dir.file("framed.bin");
    {
        std::ofstream f(framed, std::ios::binary);
        auto put_chunk = [&](const uint8_t* p, std::size_t n) {
            const uint32_t len = uint32_t(n);
            for (int i = 0; i < 4; ++i) f.put(char(uint8_t(len >> (8 * i))));
            f.write(reinterpret_cast<const char*>(p), std::streamsize(n));
        };
        put_chunk(bytes.data(), kBinaryHeaderSize);
        for (std::size_t off = kBinaryHeaderSize; off < bytes.size(); off += kBinaryRecordSize)
            put_chunk(bytes.data() + off, kBinaryRecordSize);
    }
    const auto stream_trace = dir.file("stream.csv");
    const std::string cmd = kCli + " infer --model " + model + " --stdin --out " + stream_trace +
                            " < " + framed + " 2>/dev/null";
    REQUIRE(WEXITSTATUS(std::system(cmd.c_str())) == 0);

    const auto batch = read_trace_csv(batch_trace);
    const auto streamed = read_trace_csv(stream_trace);
    REQUIRE(batch.steps.size() == streamed.steps.size());
    for (std::size_t i = 0; i < batch.steps.size(); ++i)
        for (int c = 0; c < batch.num_classes; ++c)
            CHECK(std::abs(batch.steps[i].confidence[c] - streamed.steps[i].confidence[c]) <= 1e-5);

    // one giant chunk gives the same trace (chunking invariance)
    const auto framed_one = dir.file("framed_one.bin");
    {
        std::ofstream f(framed_one, std::ios::binary);
        const uint32_t len = uint32_t(bytes.size());
        for (int i = 0; i < 4; ++i) f.put(char(uint8_t(len >> (8 * i))));
        f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    }
    const auto one_trace = dir.file("one.csv");
    const std::string cmd_one = kCli + " infer --model " + model + " --stdin --out " + one_trace +
                                " < " + framed_one + " 2>/dev/null";
    REQUIRE(WEXITSTATUS(std::system(cmd_one.c_str())) == 0);
    CHECK(slurp(one_trace) == slurp(stream_trace));
}

TEST_CASE("cli: train then eval on a tiny synthetic manifest") {
    TempDir dir;
    const auto manifest = dir.file("data/manifest.csv");
    fs::create_directories(dir.path / "data");
    const char* patterns[4] = {"cyclic_horizontal", "cyclic_vertical", "discrete_arc",
                               "discrete_linear"};
    int idx = 0;
    for (int c = 0; c < 4; ++c)
        for (int i = 0; i < 3; ++i, ++idx) {
            const auto out = dir.file("data/s" + std::to_string(idx) + ".evs1");
            REQUIRE(run(std::string("synth --pattern ") + patterns[c] +
                        " --seed " + std::to_string(100 + idx) +
                        " --duration 0.4 --rate 3000 --period 0.2 --width 32 --height 32" +
                        " --label " + std::to_string(c) + " --subject S" + std::to_string(i % 3) +
                        " --out " + out + " --manifest " + manifest) == 0);
        }

    const auto schedule = dir.file("sched.cfg");
    std::ofstream(schedule) << "stages = 2\n"
                            << "stage1.scope = all\nstage1.epochs = 2\nstage1.batch_size = 4\n"
                            << "stage1.lr = 1e-3\nstage1.labels = full\n"
                            << "stage2.scope = head_only\nstage2.epochs = 1\nstage2.batch_size = 4\n"
                            << "stage2.lr = 1e-3\nstage2.labels = full\n";
    const auto model_cfg = write_tiny_model_config(dir);
    const auto model_out = dir.file("trained.nnp1");
    const auto log_out = dir.file("log.csv");
    REQUIRE(run("train --manifest " + manifest + " --schedule " + schedule + " --model-config " +
                model_cfg + " --cadence-us 50000 --tau-us 50000 --out " + model_out + " --log " +
                log_out + " --seed 4") == 0);
    CHECK(fs::exists(model_out));
    const auto log_text = slurp(log_out);
    CHECK(log_text.rfind("stage,epoch,train_loss,val_acc,seconds", 0) == 0);
    CHECK(count_lines(log_text) == 4); // header + 3 epochs

    // trace two streams and aggregate them
    const auto t0 = dir.file("t0.csv");
    const auto t1 = dir.file("t1.csv");
    REQUIRE(run("infer --model " + model_out + " --input " + dir.file("data/s0.evs1") +
                " --cadence-us 50000 --tau-us 50000 --out " + t0) == 0);
    REQUIRE(run("infer --model " + model_out + " --input " + dir.file("data/s3.evs1") +
                " --cadence-us 50000 --tau-us 50000 --out " + t1) == 0);
    const auto traces_manifest = dir.file("traces.csv");
    std::ofstream(traces_manifest) << "path,label\nt0.csv,0\nt1.csv,1\n";
    const auto curve = dir.file("curve.csv");
    const auto confusion = dir.file("confusion.csv");
    const auto svg = dir.file("curve.svg");
    REQUIRE(run("eval --traces " + traces_manifest + " --out " + curve + " --bin-ms 100 --confusion " +
                confusion + " --svg " + svg + " --classes 4") == 0);
    CHECK(slurp(curve).rfind("bin_ms,mean_acc,std_acc,n", 0) == 0);
    CHECK(count_lines(slurp(confusion)) == 4);
    CHECK(slurp(svg).find("<svg") == 0);
}

TEST_CASE("cli: bench reports flops and throughput fields") {
    TempDir dir;
    const auto model_cfg = write_tiny_model_config(dir);
    const auto out = dir.file("bench.csv");
    REQUIRE(run("bench --model-config " + model_cfg + " --surfaces 12 --repeats 3 --out " + out) == 0);
    const auto text = slurp(out);
    CHECK(text.find("flops.backbone_per_surface,") != std::string::npos);
    CHECK(text.find("throughput.ts_per_s,") != std::string::npos);
    CHECK(text.find("latency.encoder_step_ms,") != std::string::npos);
}
