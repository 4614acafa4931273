#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "telematics/domain.hpp"
#include "telematics/records_io.hpp"

namespace telematics {

inline constexpr std::size_t kDefaultBatchSize = 10'000;

struct ShardPointCount {
    std::string shard_id;
    std::size_t point_count = 0;

    friend bool operator==(const ShardPointCount&, const ShardPointCount&) = default;
};

struct ShardScan {
    std::string shard_id;
    std::size_t records = 0;
    std::size_t malformed = 0;
};

// Which shards hold the points of each journey. Shard lists follow manifest order.
struct JourneyIndex {
    std::map<std::string, std::vector<ShardPointCount>> journeys;
    std::vector<ShardScan> shards;

    std::size_t total_records() const;
    std::size_t total_malformed() const;
};

// Scans every shard (concurrently when workers > 1). Throws DataError naming
// the shard when one cannot be read; malformed lines are counted and skipped.
JourneyIndex build_journey_index(const ShardManifest& manifest, SpeedUnit default_unit, std::size_t workers = 1);

std::string to_json(const JourneyIndex& index);
JourneyIndex journey_index_from_json(std::string_view text);

struct PackingGroup {
    std::string file_id;
    std::vector<std::string> journey_ids;  // ascending
    std::vector<std::string> shard_ids;    // manifest order
};

struct PackingPlan {
    std::vector<PackingGroup> groups;
};

// Greedy grouping in ascending journey_id order; each group closes at batch_size journeys.
PackingPlan plan_packing(const JourneyIndex& index, std::size_t batch_size = kDefaultBatchSize);

std::string packed_file_id(std::size_t group_index);

struct RepackReport {
    std::size_t input_points = 0;
    std::size_t output_points = 0;
    std::size_t dropped_duplicates = 0;
    std::size_t dropped_invalid = 0;
    std::size_t malformed_records = 0;  // unparseable lines; not part of input_points
    std::size_t journeys_in = 0;
    std::size_t trips_accepted = 0;
    std::array<std::size_t, 4> trips_rejected{};  // indexed by RejectionReason
    std::size_t rejected_trip_points = 0;
    std::vector<std::string> files;

    std::size_t rejected_total() const;
    std::size_t& rejected(RejectionReason r) { return trips_rejected[static_cast<std::size_t>(r)]; }
    std::size_t rejected(RejectionReason r) const { return trips_rejected[static_cast<std::size_t>(r)]; }

    // input = output + duplicates + invalid + points of rejected trips
    bool conserves() const;
    void merge(const RepackReport& other);
};

std::string to_json(const RepackReport& report);
RepackReport repack_report_from_json(std::string_view text);

struct RepackOptions {
    std::filesystem::path out_dir;
    SpeedUnit default_unit = SpeedUnit::mps;
    std::size_t workers = 1;
    bool write_rejects = false;
};

// Writes <out_dir>/<file_id>.ndjson plus a ".done" marker per group. Throws
// MissingArtifactError naming the group when a planned shard is absent.
RepackReport repack_execute(const PackingPlan& plan, const ShardManifest& manifest, const RepackOptions& options);

}  // namespace telematics
