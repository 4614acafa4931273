#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "telematics/geo.hpp"

namespace telematics {

enum class RoadClass { motorway, arterial, collector, local, other };

std::string_view to_string(RoadClass c) noexcept;
RoadClass parse_road_class(std::string_view s) noexcept;  // unknown names map to other

struct LrsAttributes {
    std::string way_id;
    std::string route_name;
    std::string direction;
    double mile_start = 0.0;
    double mile_end = 0.0;

    friend bool operator==(const LrsAttributes&, const LrsAttributes&) = default;
};

struct RoadSegment {
    std::string way_id;
    std::vector<GeoPoint> polyline;
    RoadClass road_class = RoadClass::other;
    std::optional<double> speed_limit_mps;
    std::optional<int> lanes;
    bool oneway = false;  // travel allowed first vertex -> last vertex only

    // Derived at load.
    double length_m = 0.0;
    std::size_t from_node = 0;
    std::size_t to_node = 0;
    std::optional<LrsAttributes> lrs;
};

struct Candidate {
    std::size_t segment = 0;  // index into RoadGraph::segments()
    std::string way_id;
    GeoPoint snapped_point;
    double distance_along = 0.0;          // meters from the polyline start
    double perpendicular_distance = 0.0;  // meters from the query point
};

struct ConflationResult;

struct GraphEdge {
    std::size_t segment;
    std::size_t to_node;
    double length_m;
};

// Immutable road network: segments, endpoint connectivity and a uniform-grid
// spatial index over segment bounding boxes.
class RoadGraph {
public:
    RoadGraph() = default;

    // Throws DataError for a segment with fewer than 2 vertices, an invalid
    // coordinate, zero length, or a duplicate way_id.
    static RoadGraph build(std::vector<RoadSegment> segments);

    const std::vector<RoadSegment>& segments() const noexcept { return segments_; }
    const std::vector<GeoPoint>& nodes() const noexcept { return nodes_; }
    std::span<const GraphEdge> edges_from(std::size_t node) const noexcept;
    std::optional<std::size_t> find(std::string_view way_id) const;
    const RoadSegment* segment(std::string_view way_id) const;

    // Every segment within `radius` meters yields one candidate at its closest
    // centerline position; sorted by perpendicular distance, then segment order.
    std::vector<Candidate> nearest_candidates(const GeoPoint& point, double radius) const;

    // Same contract without the spatial index.
    std::vector<Candidate> nearest_candidates_scan(const GeoPoint& point, double radius) const;

private:
    friend ConflationResult conflate_lrs(RoadGraph graph, std::span<const LrsAttributes> table);

    std::vector<RoadSegment> segments_;
    std::vector<GeoPoint> nodes_;
    std::vector<std::size_t> edge_offsets_;  // CSR over nodes
    std::vector<GraphEdge> edges_;
    std::unordered_map<std::string, std::size_t> by_way_id_;

    double cell_deg_ = 0.002;
    std::unordered_map<std::int64_t, std::vector<std::size_t>> cells_;
    bool polar_ = false;  // index unusable near the poles; queries fall back to a scan

    Candidate candidate_for(std::size_t segment, const GeoPoint& point) const;
    std::int64_t cell_key(std::int64_t row, std::int64_t col) const noexcept;
};

RoadGraph load_network(const std::filesystem::path& path);
RoadGraph parse_network(std::string_view json_text);
std::string network_to_json(std::span<const RoadSegment> segments);

// --- LRS conflation -------------------------------------------------------

// CSV with header way_id,route_name,direction,mile_start,mile_end.
std::vector<LrsAttributes> parse_lrs_csv(std::string_view text);
std::vector<LrsAttributes> load_lrs(const std::filesystem::path& path);
std::string lrs_to_csv(std::span<const LrsAttributes> rows);

struct ConflationResult {
    RoadGraph graph;
    std::vector<LrsAttributes> unmatched;  // rows whose way_id is not in the graph
};

// Attaches attributes by way_id. Throws DataError on duplicate way_id rows.
ConflationResult conflate_lrs(RoadGraph graph, std::span<const LrsAttributes> table);

// --- postal regions -------------------------------------------------------

struct Region {
    std::string postal_code;
    std::vector<GeoPoint> ring;  // closed: first vertex == last vertex
};

class RegionIndex {
public:
    RegionIndex() = default;

    // Throws DataError for open, degenerate or self-intersecting rings.
    explicit RegionIndex(std::vector<Region> regions);

    const std::vector<Region>& regions() const noexcept { return regions_; }
    bool empty() const noexcept { return regions_.empty(); }

private:
    std::vector<Region> regions_;  // sorted by postal_code
};

RegionIndex parse_regions(std::string_view json_text);
RegionIndex load_regions(const std::filesystem::path& path);
std::string regions_to_json(std::span<const Region> regions);

// Ray-casting point-in-polygon. A point on a region boundary matches that
// region; among several matches the lexicographically smallest code wins.
std::optional<std::string> zip_lookup(const GeoPoint& point, const RegionIndex& regions);

}  // namespace telematics
