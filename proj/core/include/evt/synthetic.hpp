#pragma once

#include "evt/event.hpp"

#include <cstdint>
#include <string>

namespace evt {

enum class MotionPattern { cyclic_horizontal, cyclic_vertical, discrete_arc, discrete_linear };

// Recipe for a synthetic labeled stream: a Gaussian-intensity blob moving
// along the pattern, thresholded into events, plus optional uniform noise.
// Cyclic patterns repeat with fixed period; discrete patterns run once and
// then hold still (a still blob emits no events).
struct MotionScript {
    MotionPattern pattern = MotionPattern::cyclic_horizontal;
    double duration_s = 2.0;    // > 0
    double rate = 10000.0;      // mean signal events per second, > 0
    double noise_rate = 0.0;    // spurious events per second, >= 0
    uint64_t seed = 0;
    double period_s = 0.5;      // cycle period for cyclic patterns
    double blob_sigma = 2.5;    // blob radius in pixels
};

MotionPattern motion_pattern_from_string(const std::string& name);
std::string to_string(MotionPattern p);

// True for the cyclic patterns; the coarse "super-category" label axis.
bool is_cyclic(MotionPattern p);

// Deterministic for a fixed script (noise comes from an independent RNG
// stream, so the signal events are identical for any noise_rate).
EventStream generate_synthetic(const MotionScript& script, uint16_t width, uint16_t height);

// Blob center at time t (seconds), in pixels. Exposed for tests that track
// the ideal trajectory.
struct BlobCenter {
    double x, y;
};
BlobCenter synthetic_center(const MotionScript& script, uint16_t width, uint16_t height, double t_s);

} // namespace evt
