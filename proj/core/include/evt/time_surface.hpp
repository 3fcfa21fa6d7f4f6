#pragma once

#include "evt/event.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace evt {

enum class SurfaceMode {
    latest_event, // value = p_last * exp((t_last - t_ref)/tau), most recent event per pixel
    decayed_sum,  // value = sum over past events of p_i * exp((t_i - t_ref)/tau)
};

struct DecayConfig {
    uint64_t tau_us = 33000;     // decay constant, > 0
    uint64_t cadence_us = 33000; // surface interval, > 0
    SurfaceMode mode = SurfaceMode::latest_event;
};

SurfaceMode surface_mode_from_string(const std::string& name);
std::string to_string(SurfaceMode m);

// Signed 2D decay grid at reference time t_ref. Pixels with no past event
// are exactly 0; in latest_event mode every value lies in [-1, +1].
struct TimeSurface {
    uint64_t t_ref = 0;
    uint16_t height = 0;
    uint16_t width = 0;
    std::vector<double> values; // row-major, height*width

    double at(uint16_t y, uint16_t x) const { return values[std::size_t(y) * width + x]; }
    double& at(uint16_t y, uint16_t x) { return values[std::size_t(y) * width + x]; }
};

// Salt-and-pepper style denoiser: keep an event iff at least min_neighbors
// OTHER events of the unfiltered input lie within Chebyshev distance
// <= spatial_radius and |dt| <= temporal_window.
struct FilterConfig {
    int spatial_radius = 1;          // pixels, >= 1
    uint64_t temporal_window = 5000; // microseconds, > 0
    int min_neighbors = 1;           // >= 1
};

EventStream filter_isolated(const EventStream& stream, const FilterConfig& cfg);

// Events with t_i > t_ref contribute exactly 0 in both modes.
TimeSurface build_time_surface(const EventStream& stream, uint64_t t_ref, const DecayConfig& cfg);

// Surfaces at t_ref = k*cadence for k = 1..horizon; surface k sees only
// events with t < k*cadence.
std::vector<TimeSurface> surface_sequence(const EventStream& stream, const DecayConfig& cfg,
                                          std::size_t horizon);

// Aspect-preserving center crop to the output aspect ratio, then bilinear
// resample. Identity dimensions return the surface unchanged.
TimeSurface resize_surface(const TimeSurface& surface, uint16_t out_h, uint16_t out_w);

struct AugmentPolicy {
    double rotation_min_deg = -15.0;
    double rotation_max_deg = 15.0;
    double crop_min = 0.8; // crop fraction range, (0, 1]
    double crop_max = 1.0;
    double flip_prob = 0.5;

    static AugmentPolicy identity() { return {0.0, 0.0, 1.0, 1.0, 0.0}; }
};

// Samples ONE transform (rotation, crop fraction, flip) and applies it to
// every surface of the sequence; deterministic for a fixed seed.
std::vector<TimeSurface> augment(const std::vector<TimeSurface>& surfaces,
                                 const AugmentPolicy& policy, uint64_t seed);

// TSF1 on-disk format: "TSF1" | t_ref:u64 | h:u16 | w:u16 | h*w f32 LE, row-major.
std::vector<uint8_t> encode_surface(const TimeSurface& surface);
TimeSurface decode_surface(const std::vector<uint8_t>& bytes, std::size_t offset = 0);
void write_surfaces_file(const std::string& path, const std::vector<TimeSurface>& surfaces);
std::vector<TimeSurface> read_surfaces_file(const std::string& path);

} // namespace evt
