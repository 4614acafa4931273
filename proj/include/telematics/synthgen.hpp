#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "telematics/domain.hpp"
#include "telematics/roadgraph.hpp"

namespace telematics {

struct SynthConfig {
    std::uint64_t seed = 42;
    int grid_rows = 10;  // blocks; nodes are (rows+1) x (cols+1)
    int grid_cols = 10;
    double segment_length_m = 200.0;
    std::size_t n_trips = 1000;
    double sampling_period_s = 3.0;
    double gps_noise_sigma_m = 0.0;
    std::size_t shard_count = 8;
    double duplicate_rate = 0.0;
    std::size_t split_degree = 1;  // max shards one trip is scattered over
    double congested_fraction = 0.0;

    double invalid_rate = 0.0;      // extra out-of-range records per point
    double postal_code_rate = 0.0;  // share of trips whose points carry postal_code
    int region_rows = 2;
    int region_cols = 2;
    double origin_lat = 37.50;
    double origin_lon = -77.45;
    std::string start_date = "2024-03-04";  // local date of the first day (a Monday)
    int span_days = 14;
    int tz_offset_minutes = -300;
    std::string journey_prefix = "J";
    std::size_t journey_offset = 0;
    // Generated trips only start between these local hours (inclusive).
    int min_hour = 0;
    int max_hour = 23;

    // Throws ConfigError: counts >= 1, rates in [0, 1], lengths and periods positive.
    void validate() const;
};

struct SynthNetwork {
    std::vector<RoadSegment> segments;
    std::vector<LrsAttributes> lrs;
    std::vector<Region> regions;
    int rows = 0;
    int cols = 0;
    double dlat_deg = 0.0;
    double dlon_deg = 0.0;
};

// Grid road network: 2*r*c + r + c two-way segments.
SynthNetwork generate_network(const SynthConfig& config);

inline std::size_t grid_segment_count(int rows, int cols) {
    return static_cast<std::size_t>(2 * rows * cols + rows + cols);
}

struct SynthTrip {
    std::string journey_id;
    bool congested = false;
    std::vector<std::string> route;        // way ids in travel order
    std::vector<RawPointRecord> points;    // ascending timestamps, noised
    std::vector<GeoPoint> true_positions;  // on the centerline
    std::vector<std::string> way_labels;   // true way per point
};

std::vector<SynthTrip> generate_trips(const SynthNetwork& network, const SynthConfig& config);

// Copies with journey ids suffixed, for corpus-duplication experiments.
std::vector<SynthTrip> with_fresh_ids(const std::vector<SynthTrip>& trips, const std::string& suffix);

struct SynthGroundTruth {
    std::size_t total_records = 0;  // lines written, including injected ones
    std::size_t unique_points = 0;
    std::size_t injected_duplicates = 0;
    std::size_t injected_invalid = 0;
    std::size_t trips = 0;
};

// Writes shard_count raw shards (shard-NNN.ndjson) into `dir` plus ground_truth.json
// into `ground_truth`. Speeds are in m/s as declared in each shard header.
SynthGroundTruth emit_shards(const std::vector<SynthTrip>& trips, const SynthConfig& config,
                             const std::filesystem::path& dir, const std::filesystem::path& ground_truth);

// network.json, lrs.csv and regions.json.
void write_network(const SynthNetwork& network, const std::filesystem::path& dir);

std::string ground_truth_json(const std::vector<SynthTrip>& trips, const SynthConfig& config,
                              const SynthGroundTruth& counts);

// Base32 geohash of the given precision.
std::string geohash_encode(const GeoPoint& p, int precision);

}  // namespace telematics
