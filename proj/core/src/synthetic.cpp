#include "evt/synthetic.hpp"

#include "evt/errors.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace evt {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

MotionPattern motion_pattern_from_string(const std::string& name) {
    if (name == "cyclic_horizontal") return MotionPattern::cyclic_horizontal;
    if (name == "cyclic_vertical") return MotionPattern::cyclic_vertical;
    if (name == "discrete_arc") return MotionPattern::discrete_arc;
    if (name == "discrete_linear") return MotionPattern::discrete_linear;
    throw ConfigError("unknown motion pattern: " + name);
}

std::string to_string(MotionPattern p) {
    switch (p) {
        case MotionPattern::cyclic_horizontal: return "cyclic_horizontal";
        case MotionPattern::cyclic_vertical: return "cyclic_vertical";
        case MotionPattern::discrete_arc: return "discrete_arc";
        case MotionPattern::discrete_linear: return "discrete_linear";
    }
    throw ConfigError("bad motion pattern value");
}

bool is_cyclic(MotionPattern p) {
    return p == MotionPattern::cyclic_horizontal || p == MotionPattern::cyclic_vertical;
}

BlobCenter synthetic_center(const MotionScript& script, uint16_t width, uint16_t height, double t_s) {
    const double cx = width / 2.0;
    const double cy = height / 2.0;
    // Keep the blob comfortably inside the frame.
    const double ax = width * 0.30;
    const double ay = height * 0.30;
    switch (script.pattern) {
        case MotionPattern::cyclic_horizontal:
            return {cx + ax * std::sin(2.0 * kPi * t_s / script.period_s), cy};
        case MotionPattern::cyclic_vertical:
            return {cx, cy + ay * std::sin(2.0 * kPi * t_s / script.period_s)};
        case MotionPattern::discrete_linear: {
            // one diagonal pass finishing at 80% of the duration, then hold
            const double u = std::min(t_s / (0.8 * script.duration_s), 1.0);
            return {cx - ax + 2.0 * ax * u, cy - ay + 2.0 * ay * u};
        }
        case MotionPattern::discrete_arc: {
            // half-circle sweep finishing at 80% of the duration, then hold
            const double u = std::min(t_s / (0.8 * script.duration_s), 1.0);
            const double angle = kPi * (1.0 - u);
            return {cx + ax * std::cos(angle), cy - ay * 0.8 * std::sin(angle)};
        }
    }
    throw ConfigError("bad motion pattern value");
}

EventStream generate_synthetic(const MotionScript& script, uint16_t width, uint16_t height) {
    if (width < 32 || height < 32) throw ConfigError("synthetic: sensor must be at least 32x32");
    if (script.duration_s <= 0) throw ConfigError("synthetic: duration must be > 0");
    if (script.rate <= 0) throw ConfigError("synthetic: rate must be > 0");
    if (script.noise_rate < 0) throw ConfigError("synthetic: noise_rate must be >= 0");

    // Independent RNG streams so that signal events are identical for any
    // noise_rate (tests diff noisy vs clean runs of one seed).
    std::mt19937_64 rng_signal(script.seed * 0x9E3779B97F4A7C15ULL + 1);
    std::mt19937_64 rng_noise(script.seed * 0xC2B2AE3D27D4EB4FULL + 2);

    std::exponential_distribution<double> gap_signal(script.rate);
    std::normal_distribution<double> radial(0.0, script.blob_sigma);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const double duration = script.duration_s;
    const uint64_t duration_us = uint64_t(duration * 1e6);
    std::vector<Event> events;
    events.reserve(std::size_t((script.rate + script.noise_rate) * duration * 1.2) + 16);

    // signal: Poisson arrivals along the blob trajectory
    double t = gap_signal(rng_signal);
    const double eps_s = 1e-4; // velocity probe step
    while (t < duration) {
        const BlobCenter c = synthetic_center(script, width, height, t);
        const BlobCenter c2 = synthetic_center(script, width, height, t + eps_s);
        const double vx = (c2.x - c.x) / eps_s;
        const double vy = (c2.y - c.y) / eps_s;
        const double speed = std::hypot(vx, vy);

        // A still blob produces no brightness change, hence no events.
        if (speed > 1.0) {
            // thresholded Gaussian intensity: support is a disc, not an
            // unbounded tail
            const double rmax = 2.2 * script.blob_sigma;
            auto draw = [&](double& ox, double& oy) {
                for (int i = 0; i < 16; ++i) {
                    ox = radial(rng_signal);
                    oy = radial(rng_signal);
                    if (ox * ox + oy * oy <= rmax * rmax) return;
                }
                const double r = std::hypot(ox, oy);
                ox *= rmax / r;
                oy *= rmax / r;
            };
            double ox, oy;
            draw(ox, oy);
            for (int attempt = 0; attempt < 8; ++attempt) {
                if (c.x + ox >= 0 && c.x + ox < width && c.y + oy >= 0 && c.y + oy < height) break;
                draw(ox, oy);
            }
            const double px = std::clamp(c.x + ox, 0.0, width - 1.0);
            const double py = std::clamp(c.y + oy, 0.0, height - 1.0);
            // leading edge brightens, trailing edge darkens
            const double along = ox * vx + oy * vy;
            Event e;
            e.x = uint16_t(px);
            e.y = uint16_t(py);
            e.t = uint64_t(t * 1e6);
            e.p = along >= 0 ? int8_t(1) : int8_t(-1);
            events.push_back(e);
        }
        t += gap_signal(rng_signal);
    }

    // noise: uniform spurious events
    if (script.noise_rate > 0) {
        std::exponential_distribution<double> gap_noise(script.noise_rate);
        double tn = gap_noise(rng_noise);
        while (tn < duration) {
            Event e;
            e.x = uint16_t(unit(rng_noise) * width);
            e.y = uint16_t(unit(rng_noise) * height);
            e.t = uint64_t(tn * 1e6);
            e.p = unit(rng_noise) < 0.5 ? int8_t(-1) : int8_t(1);
            events.push_back(e);
            tn += gap_noise(rng_noise);
        }
    }

    std::stable_sort(events.begin(), events.end(),
                     [](const Event& a, const Event& b) { return a.t < b.t; });
    // timestamps within the scripted duration by construction
    for (auto& e : events) e.t = std::min(e.t, duration_us - 1);
    // normalized like decoded streams: first event at t = 0
    if (!events.empty()) {
        const uint64_t t0 = events.front().t;
        for (auto& e : events) e.t -= t0;
    }

    EventStream s;
    s.sensor_width = width;
    s.sensor_height = height;
    s.events = std::move(events);
    return s;
}

} // namespace evt
