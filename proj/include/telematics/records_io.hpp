#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "telematics/domain.hpp"

namespace telematics {

// Raw shards: newline-delimited JSON (one record per line, metadata either
// flat or nested under "metadata", optional first line {"header":{...,"speed_unit":..}})
// or CSV with a header row naming the record fields.
struct ShardRef {
    std::string shard_id;
    std::filesystem::path path;
};

using ShardManifest = std::vector<ShardRef>;

// Every *.ndjson, *.jsonl or *.csv file in `dir`, sorted by file name.
// The shard id is the file stem.
ShardManifest scan_shard_dir(const std::filesystem::path& dir);

struct ShardContents {
    std::vector<RawPointRecord> records;
    std::size_t malformed = 0;
};

// Speeds are converted to m/s using the shard header's declared unit when
// present, otherwise `default_unit`. Throws DataError if the file cannot be opened.
ShardContents read_shard(const ShardRef& shard, SpeedUnit default_unit);

// Parses one NDJSON line. Returns nullopt for header lines and blank lines;
// sets `malformed` when the line is not a usable record.
std::optional<RawPointRecord> parse_record_line(std::string_view line, SpeedUnit unit, bool& malformed);

// Flat JSON object in canonical field order, speed in m/s.
std::string format_record(const RawPointRecord& r);

std::string json_quote(std::string_view s);

// --- packed files ----------------------------------------------------------

struct PackedHeader {
    std::string file_id;
    std::size_t journey_count = 0;
    std::size_t point_count = 0;
};

std::string format_packed_header(const PackedHeader& h);

struct PackedFile {
    PackedHeader header;
    std::vector<RawPointRecord> records;
};

// Throws DataError on a missing/garbled header or malformed record.
PackedFile read_packed_file(const std::filesystem::path& path);

std::filesystem::path done_marker(const std::filesystem::path& file);
bool has_done_marker(const std::filesystem::path& file);
void write_done_marker(const std::filesystem::path& file);

// Writes `contents` to `path` via a temporary sibling and rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace telematics
