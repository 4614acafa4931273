#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "telematics/domain.hpp"
#include "telematics/roadgraph.hpp"

namespace telematics {

struct MatchParams {
    double sigma_gps_m = 5.0;          // emission spread
    double beta_m = 20.0;              // transition scale
    double candidate_radius_m = 50.0;
    double max_time_gap_s = 60.0;
    double max_route_ratio = 3.0;      // route distance cap relative to great-circle distance

    // Throws ConfigError unless all fields are positive and max_route_ratio >= 1.
    void validate() const;
};

// --- HMM decoding -----------------------------------------------------------

// One observation of a hidden-state chain. transition_log[i][j] is the log
// weight from state i of the previous step to state j of this one (-inf when
// impossible) and is empty for the first step.
struct LatticeStep {
    std::vector<double> emission_log;
    std::vector<std::vector<double>> transition_log;
};

struct ViterbiPath {
    std::vector<std::size_t> states;
    // restarts[t] is true when no state of step t was reachable from step t-1,
    // so decoding restarted there as an independent chain (always true at t=0).
    std::vector<bool> restarts;
};

// Maximum-joint-probability state sequence in the log domain. Ties resolve to
// the lower state index. Every step must have at least one state.
ViterbiPath viterbi_decode(std::span<const LatticeStep> steps);

double emission_log_weight(double perpendicular_distance_m, const MatchParams& params) noexcept;
double transition_log_weight(double route_distance_m, double great_circle_m, const MatchParams& params) noexcept;

// Shortest along-graph distance from `from` to each of `to`, searching no
// further than `bound` meters; +inf where the bound is exceeded. Movement
// along a single segment is allowed in both directions; leaving or entering
// a one-way segment through a node honours its direction.
std::vector<double> route_distances(const RoadGraph& graph, const Candidate& from, std::span<const Candidate> to,
                                    double bound);

// --- matching --------------------------------------------------------------

struct MatchedPosition {
    std::string way_id;
    GeoPoint snapped_point;
    double distance_along_m = 0.0;
    double perpendicular_distance_m = 0.0;
};

// One trip point with its match, or no match (the unmatched marker).
// `chunk` numbers the independently decoded pieces of the trip.
struct MatchEntry {
    RawPointRecord source;
    std::optional<MatchedPosition> match;
    std::size_t chunk = 0;
};

struct MatchedTrip {
    std::string journey_id;
    std::vector<MatchEntry> entries;

    std::size_t matched_count() const noexcept;
};

// Points without a candidate inside candidate_radius are unmatched and split
// the sequence, as do time gaps above max_time_gap; each piece is decoded
// independently.
MatchedTrip match_trip(const Trip& trip, const RoadGraph& graph, const MatchParams& params);

// Same, starting from a cleaned point sequence.
MatchedTrip match_points(std::span<const RawPointRecord> points, const RoadGraph& graph, const MatchParams& params);

struct Traversal {
    std::string journey_id;
    std::string way_id;
    std::size_t run_index = 0;
    std::vector<MatchEntry> points;
    std::int64_t entry_time_ms = 0;
    std::int64_t exit_time_ms = 0;
};

// Maximal runs of one way_id, broken by a way change, an unmatched point or a
// chunk boundary. run_index counts traversals in trip order from 0.
std::vector<Traversal> segment_traversals(const MatchedTrip& trip);

// --- matched file ------------------------------------------------------------

// Packed record grammar plus way_id ("" when unmatched), snapped_lat,
// snapped_lon, distance_along_m and chunk. Header line:
// {file_id, journey_count, point_count, matched_point_count}.
std::string format_matched_file(std::string_view file_id, std::span<const MatchedTrip> trips);

struct MatchedFile {
    std::string file_id;
    std::vector<MatchedTrip> trips;
};

MatchedFile read_matched_file(const std::filesystem::path& path);

}  // namespace telematics
