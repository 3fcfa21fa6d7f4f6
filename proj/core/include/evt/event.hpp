#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace evt {

// One asynchronous sensor event. Polarity is -1 or +1, never 0.
struct Event {
    uint16_t x = 0;
    uint16_t y = 0;
    uint64_t t = 0; // microseconds
    int8_t p = 1;

    bool operator==(const Event&) const = default;
};

// A recorded stream plus sensor geometry and optional dataset metadata.
// Events are expected to be timestamp-ordered (non-decreasing).
struct EventStream {
    uint16_t sensor_width = 0;
    uint16_t sensor_height = 0;
    std::vector<Event> events;
    std::optional<int> label;
    std::optional<std::string> subject;

    uint64_t duration_us() const { return events.empty() ? 0 : events.back().t; }

    bool operator==(const EventStream&) const = default;
};

// One invariant violation found by validate_stream.
struct ValidationIssue {
    enum class Kind { NonMonotonicTimestamp, OutOfBoundsX, OutOfBoundsY, BadPolarity };
    Kind kind;
    std::size_t index; // offending event index
    std::string reason;
};

struct ValidationReport {
    std::vector<ValidationIssue> issues;
    bool ok() const { return issues.empty(); }
};

// Lists every invariant violation (index + reason). Empty report iff valid.
ValidationReport validate_stream(const EventStream& stream);

// Throws ValidationError on the first violation; convenience for decode paths.
void require_valid(const EventStream& stream);

// Events with t0 <= t < t1, order preserved. Metadata is copied through.
EventStream slice_window(const EventStream& stream, uint64_t t0, uint64_t t1);

} // namespace evt
