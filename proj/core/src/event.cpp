#include "evt/event.hpp"

#include "evt/errors.hpp"

#include <algorithm>

namespace evt {

ValidationReport validate_stream(const EventStream& stream) {
    ValidationReport report;
    for (std::size_t i = 0; i < stream.events.size(); ++i) {
        const Event& e = stream.events[i];
        if (e.p != -1 && e.p != 1)
            report.issues.push_back({ValidationIssue::Kind::BadPolarity, i,
                                     "polarity " + std::to_string(int(e.p)) + " not in {-1, +1}"});
        if (e.x >= stream.sensor_width)
            report.issues.push_back({ValidationIssue::Kind::OutOfBoundsX, i,
                                     "x=" + std::to_string(e.x) + " >= width " +
                                         std::to_string(stream.sensor_width)});
        if (e.y >= stream.sensor_height)
            report.issues.push_back({ValidationIssue::Kind::OutOfBoundsY, i,
                                     "y=" + std::to_string(e.y) + " >= height " +
                                         std::to_string(stream.sensor_height)});
        if (i > 0 && e.t < stream.events[i - 1].t)
            report.issues.push_back({ValidationIssue::Kind::NonMonotonicTimestamp, i,
                                     "t=" + std::to_string(e.t) + " < previous t=" +
                                         std::to_string(stream.events[i - 1].t)});
    }
    return report;
}

void require_valid(const EventStream& stream) {
    const auto report = validate_stream(stream);
    if (!report.ok()) {
        const auto& first = report.issues.front();
        throw ValidationError("invalid stream: " + first.reason, first.index);
    }
}

EventStream slice_window(const EventStream& stream, uint64_t t0, uint64_t t1) {
    if (t0 > t1) throw ConfigError("slice_window: t0 > t1");
    EventStream out;
    out.sensor_width = stream.sensor_width;
    out.sensor_height = stream.sensor_height;
    out.label = stream.label;
    out.subject = stream.subject;
    // events are timestamp-ordered, so the window is a contiguous span
    const auto lo = std::lower_bound(stream.events.begin(), stream.events.end(), t0,
                                     [](const Event& e, uint64_t t) { return e.t < t; });
    const auto hi = std::lower_bound(lo, stream.events.end(), t1,
                                     [](const Event& e, uint64_t t) { return e.t < t; });
    out.events.assign(lo, hi);
    return out;
}

} // namespace evt
