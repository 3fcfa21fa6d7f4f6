#include "evt/time_surface.hpp"

#include "evt/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace evt {

SurfaceMode surface_mode_from_string(const std::string& name) {
    if (name == "latest_event") return SurfaceMode::latest_event;
    if (name == "decayed_sum") return SurfaceMode::decayed_sum;
    throw ConfigError("unknown surface mode: " + name);
}

std::string to_string(SurfaceMode m) {
    return m == SurfaceMode::latest_event ? "latest_event" : "decayed_sum";
}

namespace {

void check_filter(const FilterConfig& cfg) {
    if (cfg.spatial_radius < 1) throw ConfigError("filter: spatial_radius must be >= 1");
    if (cfg.temporal_window == 0) throw ConfigError("filter: temporal_window must be > 0");
    if (cfg.min_neighbors < 1) throw ConfigError("filter: min_neighbors must be >= 1");
}

void check_decay(const DecayConfig& cfg) {
    if (cfg.tau_us == 0) throw ConfigError("decay: tau must be > 0");
    if (cfg.cadence_us == 0) throw ConfigError("decay: cadence must be > 0");
}

} // namespace

// Sliding time window over the (sorted) input with an incrementally
// maintained per-pixel count grid; each event enters and leaves the window
// once, so the pass is O(n * (2r+1)^2). Neighbor counts are always taken
// against the unfiltered input.
EventStream filter_isolated(const EventStream& stream, const FilterConfig& cfg) {
    check_filter(cfg);
    EventStream out;
    out.sensor_width = stream.sensor_width;
    out.sensor_height = stream.sensor_height;
    out.label = stream.label;
    out.subject = stream.subject;
    const auto& ev = stream.events;
    if (ev.empty()) return out;

    const int W = stream.sensor_width, H = stream.sensor_height, R = cfg.spatial_radius;
    std::vector<int> counts(std::size_t(W) * H, 0);
    std::size_t lo = 0, hi = 0;

    out.events.reserve(ev.size());
    for (std::size_t i = 0; i < ev.size(); ++i) {
        const uint64_t t = ev[i].t;
        while (hi < ev.size() && ev[hi].t <= t + cfg.temporal_window) {
            ++counts[std::size_t(ev[hi].y) * W + ev[hi].x];
            ++hi;
        }
        while (lo < ev.size() && ev[lo].t + cfg.temporal_window < t) {
            --counts[std::size_t(ev[lo].y) * W + ev[lo].x];
            ++lo;
        }
        int neighbors = -1; // the event itself sits in the window
        const int y0 = std::max(0, ev[i].y - R), y1 = std::min(H - 1, ev[i].y + R);
        const int x0 = std::max(0, ev[i].x - R), x1 = std::min(W - 1, ev[i].x + R);
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) neighbors += counts[std::size_t(y) * W + x];
        if (neighbors >= cfg.min_neighbors) out.events.push_back(ev[i]);
    }
    return out;
}

TimeSurface build_time_surface(const EventStream& stream, uint64_t t_ref, const DecayConfig& cfg) {
    check_decay(cfg);
    TimeSurface s;
    s.t_ref = t_ref;
    s.width = stream.sensor_width;
    s.height = stream.sensor_height;
    s.values.assign(std::size_t(s.width) * s.height, 0.0);
    const double tau = double(cfg.tau_us);

    if (cfg.mode == SurfaceMode::latest_event) {
        // most recent event per pixel with t <= t_ref (later in stream wins ties)
        std::vector<int64_t> last_t(s.values.size(), -1);
        std::vector<int8_t> last_p(s.values.size(), 0);
        for (const Event& e : stream.events) {
            if (e.t > t_ref) continue;
            const std::size_t idx = std::size_t(e.y) * s.width + e.x;
            last_t[idx] = int64_t(e.t);
            last_p[idx] = e.p;
        }
        for (std::size_t i = 0; i < s.values.size(); ++i)
            if (last_t[i] >= 0)
                s.values[i] = double(last_p[i]) * std::exp(-double(t_ref - uint64_t(last_t[i])) / tau);
    } else {
        for (const Event& e : stream.events) {
            if (e.t > t_ref) continue;
            const std::size_t idx = std::size_t(e.y) * s.width + e.x;
            s.values[idx] += double(e.p) * std::exp(-double(t_ref - e.t) / tau);
        }
    }
    return s;
}

std::vector<TimeSurface> surface_sequence(const EventStream& stream, const DecayConfig& cfg,
                                          std::size_t horizon) {
    check_decay(cfg);
    if (horizon < 1) throw ConfigError("surface_sequence: horizon must be >= 1");
    std::vector<TimeSurface> out;
    out.reserve(horizon);
    // surface k sees only events with t < k*cadence
    std::size_t idx = 0;
    EventStream prefix;
    prefix.sensor_width = stream.sensor_width;
    prefix.sensor_height = stream.sensor_height;
    for (std::size_t k = 1; k <= horizon; ++k) {
        const uint64_t t_ref = uint64_t(k) * cfg.cadence_us;
        while (idx < stream.events.size() && stream.events[idx].t < t_ref) {
            prefix.events.push_back(stream.events[idx]);
            ++idx;
        }
        out.push_back(build_time_surface(prefix, t_ref, cfg));
    }
    return out;
}

namespace {

// Bilinear sample with align-corners-false mapping; src coordinates clamped
// to the grid.
double bilinear_at(const TimeSurface& s, double sy, double sx) {
    sy = std::clamp(sy, 0.0, double(s.height - 1));
    sx = std::clamp(sx, 0.0, double(s.width - 1));
    const int y0 = int(sy), x0 = int(sx);
    const int y1 = std::min(y0 + 1, s.height - 1), x1 = std::min(x0 + 1, s.width - 1);
    const double fy = sy - y0, fx = sx - x0;
    const double top = s.at(uint16_t(y0), uint16_t(x0)) * (1 - fx) + s.at(uint16_t(y0), uint16_t(x1)) * fx;
    const double bot = s.at(uint16_t(y1), uint16_t(x0)) * (1 - fx) + s.at(uint16_t(y1), uint16_t(x1)) * fx;
    return top * (1 - fy) + bot * fy;
}

TimeSurface resample(const TimeSurface& src, int y0, int x0, int crop_h, int crop_w,
                     uint16_t out_h, uint16_t out_w) {
    TimeSurface out;
    out.t_ref = src.t_ref;
    out.height = out_h;
    out.width = out_w;
    out.values.resize(std::size_t(out_h) * out_w);
    const double sy_scale = double(crop_h) / out_h;
    const double sx_scale = double(crop_w) / out_w;
    for (int oy = 0; oy < out_h; ++oy)
        for (int ox = 0; ox < out_w; ++ox) {
            const double sy = y0 + (oy + 0.5) * sy_scale - 0.5;
            const double sx = x0 + (ox + 0.5) * sx_scale - 0.5;
            out.values[std::size_t(oy) * out_w + ox] =
                bilinear_at(src, std::clamp(sy, double(y0), double(y0 + crop_h - 1)),
                            std::clamp(sx, double(x0), double(x0 + crop_w - 1)));
        }
    return out;
}

} // namespace

TimeSurface resize_surface(const TimeSurface& surface, uint16_t out_h, uint16_t out_w) {
    if (out_h < 1 || out_w < 1) throw ConfigError("resize: output dims must be >= 1");
    if (out_h == surface.height && out_w == surface.width) return surface;
    // center crop to the output aspect ratio
    const double scale = std::min(double(surface.width) / out_w, double(surface.height) / out_h);
    const int crop_w = std::max(1, std::min<int>(surface.width, int(std::lround(out_w * scale))));
    const int crop_h = std::max(1, std::min<int>(surface.height, int(std::lround(out_h * scale))));
    const int x0 = (surface.width - crop_w) / 2;
    const int y0 = (surface.height - crop_h) / 2;
    return resample(surface, y0, x0, crop_h, crop_w, out_h, out_w);
}

namespace {

TimeSurface rotate_surface(const TimeSurface& s, double angle_deg) {
    if (angle_deg == 0.0) return s;
    const double a = angle_deg * 3.14159265358979323846 / 180.0;
    const double ca = std::cos(a), sa = std::sin(a);
    const double cy = (s.height - 1) / 2.0, cx = (s.width - 1) / 2.0;
    TimeSurface out;
    out.t_ref = s.t_ref;
    out.height = s.height;
    out.width = s.width;
    out.values.assign(s.values.size(), 0.0);
    for (int oy = 0; oy < s.height; ++oy)
        for (int ox = 0; ox < s.width; ++ox) {
            const double dy = oy - cy, dx = ox - cx;
            // inverse rotation into source coordinates
            const double sx = cx + ca * dx + sa * dy;
            const double sy = cy - sa * dx + ca * dy;
            if (sx < -0.5 || sx > s.width - 0.5 || sy < -0.5 || sy > s.height - 0.5) continue;
            out.values[std::size_t(oy) * s.width + ox] = bilinear_at(s, sy, sx);
        }
    return out;
}

TimeSurface crop_zoom(const TimeSurface& s, double fraction) {
    if (fraction >= 1.0) return s;
    const int crop_h = std::max(1, int(std::lround(s.height * fraction)));
    const int crop_w = std::max(1, int(std::lround(s.width * fraction)));
    if (crop_h == s.height && crop_w == s.width) return s;
    const int y0 = (s.height - crop_h) / 2, x0 = (s.width - crop_w) / 2;
    return resample(s, y0, x0, crop_h, crop_w, s.height, s.width);
}

TimeSurface flip_horizontal(const TimeSurface& s) {
    TimeSurface out = s;
    for (int y = 0; y < s.height; ++y)
        for (int x = 0; x < s.width; ++x)
            out.values[std::size_t(y) * s.width + x] = s.values[std::size_t(y) * s.width + (s.width - 1 - x)];
    return out;
}

} // namespace

std::vector<TimeSurface> augment(const std::vector<TimeSurface>& surfaces,
                                 const AugmentPolicy& policy, uint64_t seed) {
    if (policy.crop_min <= 0 || policy.crop_max > 1.0 || policy.crop_min > policy.crop_max)
        throw ConfigError("augment: crop fraction range must sit in (0, 1]");
    if (policy.rotation_min_deg > policy.rotation_max_deg)
        throw ConfigError("augment: rotation range inverted");
    if (policy.flip_prob < 0 || policy.flip_prob > 1)
        throw ConfigError("augment: flip_prob must be in [0, 1]");

    // one transform for the whole sequence (temporal consistency)
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double angle = policy.rotation_min_deg +
                         (policy.rotation_max_deg - policy.rotation_min_deg) * unit(rng);
    const double crop = policy.crop_min + (policy.crop_max - policy.crop_min) * unit(rng);
    const bool flip = unit(rng) < policy.flip_prob;

    std::vector<TimeSurface> out;
    out.reserve(surfaces.size());
    for (const auto& s : surfaces) {
        TimeSurface t = rotate_surface(s, angle);
        t = crop_zoom(t, crop);
        if (flip) t = flip_horizontal(t);
        out.push_back(std::move(t));
    }
    return out;
}

// ---- TSF1 serialization --------------------------------------------------

std::vector<uint8_t> encode_surface(const TimeSurface& surface) {
    std::vector<uint8_t> out = {'T', 'S', 'F', '1'};
    for (int i = 0; i < 8; ++i) out.push_back(uint8_t(surface.t_ref >> (8 * i)));
    out.push_back(uint8_t(surface.height));
    out.push_back(uint8_t(surface.height >> 8));
    out.push_back(uint8_t(surface.width));
    out.push_back(uint8_t(surface.width >> 8));
    for (double v : surface.values) {
        const float f = float(v);
        uint32_t bits;
        std::memcpy(&bits, &f, 4);
        for (int i = 0; i < 4; ++i) out.push_back(uint8_t(bits >> (8 * i)));
    }
    return out;
}

TimeSurface decode_surface(const std::vector<uint8_t>& bytes, std::size_t offset) {
    if (offset + 16 > bytes.size()) throw ParseError("TSF1: truncated header", offset);
    if (std::memcmp(bytes.data() + offset, "TSF1", 4) != 0)
        throw ParseError("TSF1: bad magic", offset);
    TimeSurface s;
    s.t_ref = 0;
    for (int i = 0; i < 8; ++i) s.t_ref |= uint64_t(bytes[offset + 4 + i]) << (8 * i);
    s.height = uint16_t(bytes[offset + 12]) | uint16_t(bytes[offset + 13]) << 8;
    s.width = uint16_t(bytes[offset + 14]) | uint16_t(bytes[offset + 15]) << 8;
    const std::size_t n = std::size_t(s.height) * s.width;
    if (offset + 16 + 4 * n > bytes.size()) throw ParseError("TSF1: truncated values", offset + 16);
    s.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= uint32_t(bytes[offset + 16 + 4 * i + b]) << (8 * b);
        float f;
        std::memcpy(&f, &bits, 4);
        s.values[i] = double(f);
    }
    return s;
}

void write_surfaces_file(const std::string& path, const std::vector<TimeSurface>& surfaces) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open for write: " + path);
    for (const auto& s : surfaces) {
        const auto bytes = encode_surface(s);
        f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    }
}

std::vector<TimeSurface> read_surfaces_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    std::vector<TimeSurface> out;
    std::size_t off = 0;
    while (off < bytes.size()) {
        TimeSurface s = decode_surface(bytes, off);
        off += 16 + 4 * s.values.size();
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace evt
