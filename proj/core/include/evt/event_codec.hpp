#pragma once

#include "evt/event.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace evt {

enum class StreamFormat { binary_v1, csv };

// binary_v1 layout, all little-endian:
//   header: magic "EVS1" | width:u16 | height:u16 | count:u64   (16 bytes)
//   record: x:u16 | y:u16 | t:u64 | p:i8                        (13 bytes)
inline constexpr std::size_t kBinaryHeaderSize = 16;
inline constexpr std::size_t kBinaryRecordSize = 13;

// Decodes and validates a stream. Timestamps are normalized so the first
// event sits at t = 0. CSV carries no sensor geometry; pass the dimensions
// explicitly or leave 0 to infer them as max coordinate + 1.
EventStream decode_stream(const std::vector<uint8_t>& bytes, StreamFormat format,
                          uint16_t csv_width = 0, uint16_t csv_height = 0);

// Bit-exact serialization. decode(encode(s)) == s field-for-field for
// normalized streams (CSV needs the dimensions handed back to decode).
std::vector<uint8_t> encode_stream(const EventStream& stream, StreamFormat format);

// File helpers; format picked by extension (.evs1 -> binary_v1, .csv -> csv)
// unless forced.
EventStream read_stream_file(const std::string& path,
                             uint16_t csv_width = 0, uint16_t csv_height = 0);
void write_stream_file(const std::string& path, const EventStream& stream);
StreamFormat format_from_path(const std::string& path);

std::vector<uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes);

} // namespace evt
