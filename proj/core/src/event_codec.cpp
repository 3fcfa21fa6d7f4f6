#include "evt/event_codec.hpp"

#include "evt/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>
#include <fstream>

namespace evt {

namespace {

constexpr char kMagic[4] = {'E', 'V', 'S', '1'};

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(uint8_t(v));
    out.push_back(uint8_t(v >> 8));
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(uint8_t(v >> (8 * i)));
}

uint16_t get_u16(const uint8_t* p) { return uint16_t(p[0]) | uint16_t(p[1]) << 8; }

uint64_t get_u64(const uint8_t* p) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(p[i]) << (8 * i);
    return v;
}

void normalize_timestamps(EventStream& s) {
    if (s.events.empty()) return;
    const uint64_t t0 = s.events.front().t;
    if (t0 == 0) return;
    for (auto& e : s.events) e.t -= t0;
}

EventStream decode_binary(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < kBinaryHeaderSize)
        throw ParseError("binary_v1: payload shorter than header", bytes.size());
    if (std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw ParseError("binary_v1: bad magic", 0);
    EventStream s;
    s.sensor_width = get_u16(bytes.data() + 4);
    s.sensor_height = get_u16(bytes.data() + 6);
    const uint64_t count = get_u64(bytes.data() + 8);
    const std::size_t expected = kBinaryHeaderSize + count * kBinaryRecordSize;
    if (bytes.size() != expected)
        throw ParseError("binary_v1: payload is " + std::to_string(bytes.size()) +
                             " bytes, header promises " + std::to_string(expected),
                         std::min(bytes.size(), expected));
    s.events.reserve(count);
    std::size_t off = kBinaryHeaderSize;
    for (uint64_t i = 0; i < count; ++i, off += kBinaryRecordSize) {
        Event e;
        e.x = get_u16(bytes.data() + off);
        e.y = get_u16(bytes.data() + off + 2);
        e.t = get_u64(bytes.data() + off + 4);
        e.p = int8_t(bytes[off + 12]);
        s.events.push_back(e);
    }
    return s;
}

std::vector<uint8_t> encode_binary(const EventStream& s) {
    std::vector<uint8_t> out;
    out.reserve(kBinaryHeaderSize + s.events.size() * kBinaryRecordSize);
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u16(out, s.sensor_width);
    put_u16(out, s.sensor_height);
    put_u64(out, s.events.size());
    for (const Event& e : s.events) {
        put_u16(out, e.x);
        put_u16(out, e.y);
        put_u64(out, e.t);
        out.push_back(uint8_t(e.p));
    }
    return out;
}

// CSV: mandatory header line "x,y,t,p", then one event per line.
EventStream decode_csv(const std::vector<uint8_t>& bytes, uint16_t width, uint16_t height) {
    const char* data = reinterpret_cast<const char*>(bytes.data());
    const std::size_t size = bytes.size();
    std::size_t pos = 0;

    auto next_line = [&](std::size_t& line_start) -> std::string_view {
        line_start = pos;
        std::size_t end = pos;
        while (end < size && data[end] != '\n') ++end;
        std::string_view line(data + pos, end - pos);
        pos = end < size ? end + 1 : end;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        return line;
    };

    std::size_t line_off = 0;
    if (pos >= size) throw ParseError("csv: empty payload, expected header line", 0);
    const auto header = next_line(line_off);
    if (header != "x,y,t,p")
        throw ParseError("csv: missing 'x,y,t,p' header line", line_off);

    EventStream s;
    while (pos < size) {
        const auto line = next_line(line_off);
        if (line.empty()) continue;
        uint64_t fields[4];
        bool negative_p = false;
        const char* cur = line.data();
        const char* line_end = line.data() + line.size();
        for (int f = 0; f < 4; ++f) {
            if (f == 3 && cur < line_end && *cur == '-') {
                negative_p = true;
                ++cur;
            }
            auto [ptr, ec] = std::from_chars(cur, line_end, fields[f]);
            if (ec != std::errc())
                throw ParseError("csv: malformed field " + std::to_string(f + 1),
                                 line_off + std::size_t(cur - line.data()));
            cur = ptr;
            if (f < 3) {
                if (cur >= line_end || *cur != ',')
                    throw ParseError("csv: expected ','", line_off + std::size_t(cur - line.data()));
                ++cur;
            }
        }
        if (cur != line_end)
            throw ParseError("csv: trailing characters", line_off + std::size_t(cur - line.data()));
        if (fields[0] > 0xFFFF || fields[1] > 0xFFFF)
            throw ParseError("csv: coordinate exceeds 16 bits", line_off);
        Event e;
        e.x = uint16_t(fields[0]);
        e.y = uint16_t(fields[1]);
        e.t = fields[2];
        e.p = negative_p ? int8_t(-int(fields[3])) : int8_t(fields[3]);
        s.events.push_back(e);
    }

    if (width && height) {
        s.sensor_width = width;
        s.sensor_height = height;
    } else {
        uint16_t mx = 0, my = 0;
        for (const Event& e : s.events) {
            mx = std::max(mx, e.x);
            my = std::max(my, e.y);
        }
        s.sensor_width = width ? width : uint16_t(mx + 1);
        s.sensor_height = height ? height : uint16_t(my + 1);
    }
    return s;
}

std::vector<uint8_t> encode_csv(const EventStream& s) {
    std::string out = "x,y,t,p\n";
    for (const Event& e : s.events) {
        out += std::to_string(e.x);
        out += ',';
        out += std::to_string(e.y);
        out += ',';
        out += std::to_string(e.t);
        out += ',';
        out += std::to_string(int(e.p));
        out += '\n';
    }
    return {out.begin(), out.end()};
}

} // namespace

EventStream decode_stream(const std::vector<uint8_t>& bytes, StreamFormat format,
                          uint16_t csv_width, uint16_t csv_height) {
    EventStream s = format == StreamFormat::binary_v1 ? decode_binary(bytes)
                                                      : decode_csv(bytes, csv_width, csv_height);
    require_valid(s); // before normalization: subtracting t0 would wrap non-monotonic input
    normalize_timestamps(s);
    return s;
}

std::vector<uint8_t> encode_stream(const EventStream& stream, StreamFormat format) {
    require_valid(stream);
    return format == StreamFormat::binary_v1 ? encode_binary(stream) : encode_csv(stream);
}

StreamFormat format_from_path(const std::string& path) {
    const auto dot = path.rfind('.');
    const std::string ext = dot == std::string::npos ? "" : path.substr(dot);
    if (ext == ".csv") return StreamFormat::csv;
    if (ext == ".evs1" || ext == ".evs") return StreamFormat::binary_v1;
    throw ConfigError("cannot infer stream format from extension: " + path);
}

std::vector<uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open: " + path);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open for write: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

EventStream read_stream_file(const std::string& path, uint16_t csv_width, uint16_t csv_height) {
    return decode_stream(read_file_bytes(path), format_from_path(path), csv_width, csv_height);
}

void write_stream_file(const std::string& path, const EventStream& stream) {
    write_file_bytes(path, encode_stream(stream, format_from_path(path)));
}

} // namespace evt
