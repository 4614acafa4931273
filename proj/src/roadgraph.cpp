#include "telematics/roadgraph.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <set>

#include <fmt/format.h>
#include "json.hpp"

#include "telematics/errors.hpp"
#include "telematics/records_io.hpp"

namespace telematics {

using nlohmann::json;

namespace {

constexpr double kNodeToleranceDeg = 1e-7;
constexpr double kMetersPerDegLat = kEarthRadiusMeters * kPi / 180.0;
constexpr double kPolarLimitDeg = 85.0;
constexpr std::size_t kMaxQueryCells = 4096;

struct Bbox {
    double min_lat, max_lat, min_lon, max_lon;
};

// Bounding box of the arc a->b, padded for the great-circle bulge.
Bbox arc_bbox(const GeoPoint& a, const GeoPoint& b) {
    const double len = haversine_distance(a, b);
    const double max_abs_lat = std::max(std::abs(a.latitude), std::abs(b.latitude));
    const double bulge_m = len * len / (8.0 * kEarthRadiusMeters) * (1.0 + std::tan(max_abs_lat * kPi / 180.0)) + 0.01;
    const double pad_lat = bulge_m / kMetersPerDegLat;
    const double pad_lon = pad_lat / std::cos(std::min(max_abs_lat + pad_lat, kPolarLimitDeg) * kPi / 180.0);
    return {std::min(a.latitude, b.latitude) - pad_lat, std::max(a.latitude, b.latitude) + pad_lat,
            std::min(a.longitude, b.longitude) - pad_lon, std::max(a.longitude, b.longitude) + pad_lon};
}

std::int64_t cell_of(double deg, double cell) { return static_cast<std::int64_t>(std::floor(deg / cell)); }

}  // namespace

std::string_view to_string(RoadClass c) noexcept {
    switch (c) {
        case RoadClass::motorway: return "motorway";
        case RoadClass::arterial: return "arterial";
        case RoadClass::collector: return "collector";
        case RoadClass::local: return "local";
        case RoadClass::other: break;
    }
    return "other";
}

RoadClass parse_road_class(std::string_view s) noexcept {
    if (s == "motorway") return RoadClass::motorway;
    if (s == "arterial") return RoadClass::arterial;
    if (s == "collector") return RoadClass::collector;
    if (s == "local") return RoadClass::local;
    return RoadClass::other;
}

std::int64_t RoadGraph::cell_key(std::int64_t row, std::int64_t col) const noexcept {
    return (row << 32) ^ (col & 0xffffffffLL);
}

RoadGraph RoadGraph::build(std::vector<RoadSegment> segments) {
    RoadGraph g;
    std::map<std::pair<std::int64_t, std::int64_t>, std::vector<std::size_t>> node_grid;
    auto node_for = [&](const GeoPoint& p) {
        const auto r = static_cast<std::int64_t>(std::llround(p.latitude / kNodeToleranceDeg));
        const auto c = static_cast<std::int64_t>(std::llround(p.longitude / kNodeToleranceDeg));
        for (std::int64_t dr = -1; dr <= 1; ++dr) {
            for (std::int64_t dc = -1; dc <= 1; ++dc) {
                const auto it = node_grid.find({r + dr, c + dc});
                if (it == node_grid.end()) continue;
                for (std::size_t n : it->second) {
                    if (std::abs(g.nodes_[n].latitude - p.latitude) <= kNodeToleranceDeg &&
                        std::abs(g.nodes_[n].longitude - p.longitude) <= kNodeToleranceDeg) {
                        return n;
                    }
                }
            }
        }
        g.nodes_.push_back(p);
        node_grid[{r, c}].push_back(g.nodes_.size() - 1);
        return g.nodes_.size() - 1;
    };

    for (std::size_t i = 0; i < segments.size(); ++i) {
        RoadSegment& s = segments[i];
        if (s.polyline.size() < 2) throw DataError(fmt::format("segment '{}' has fewer than 2 vertices", s.way_id));
        for (const auto& p : s.polyline) {
            if (!is_valid(p)) throw DataError(fmt::format("segment '{}' has an invalid coordinate", s.way_id));
            if (std::abs(p.latitude) > kPolarLimitDeg) g.polar_ = true;
        }
        s.length_m = path_length(s.polyline);
        if (!(s.length_m > 0.0)) throw DataError(fmt::format("segment '{}' has zero length", s.way_id));
        if (!g.by_way_id_.emplace(s.way_id, i).second) throw DataError(fmt::format("duplicate way_id '{}'", s.way_id));
        s.from_node = node_for(s.polyline.front());
        s.to_node = node_for(s.polyline.back());
    }
    g.segments_ = std::move(segments);

    std::vector<std::vector<GraphEdge>> adj(g.nodes_.size());
    for (std::size_t i = 0; i < g.segments_.size(); ++i) {
        const auto& s = g.segments_[i];
        adj[s.from_node].push_back({i, s.to_node, s.length_m});
        if (!s.oneway) adj[s.to_node].push_back({i, s.from_node, s.length_m});
    }
    g.edge_offsets_.assign(1, 0);
    for (auto& list : adj) {
        g.edges_.insert(g.edges_.end(), list.begin(), list.end());
        g.edge_offsets_.push_back(g.edges_.size());
    }

    for (std::size_t i = 0; i < g.segments_.size(); ++i) {
        const auto& poly = g.segments_[i].polyline;
        std::set<std::int64_t> keys;
        for (std::size_t v = 1; v < poly.size(); ++v) {
            const Bbox b = arc_bbox(poly[v - 1], poly[v]);
            for (auto r = cell_of(b.min_lat, g.cell_deg_); r <= cell_of(b.max_lat, g.cell_deg_); ++r) {
                for (auto c = cell_of(b.min_lon, g.cell_deg_); c <= cell_of(b.max_lon, g.cell_deg_); ++c) {
                    keys.insert(g.cell_key(r, c));
                }
            }
        }
        for (auto k : keys) g.cells_[k].push_back(i);
    }
    return g;
}

std::span<const GraphEdge> RoadGraph::edges_from(std::size_t node) const noexcept {
    if (node + 1 >= edge_offsets_.size()) return {};
    return std::span<const GraphEdge>(edges_).subspan(edge_offsets_[node], edge_offsets_[node + 1] - edge_offsets_[node]);
}

std::optional<std::size_t> RoadGraph::find(std::string_view way_id) const {
    const auto it = by_way_id_.find(std::string(way_id));
    if (it == by_way_id_.end()) return std::nullopt;
    return it->second;
}

const RoadSegment* RoadGraph::segment(std::string_view way_id) const {
    const auto i = find(way_id);
    return i ? &segments_[*i] : nullptr;
}

Candidate RoadGraph::candidate_for(std::size_t segment, const GeoPoint& point) const {
    const auto& s = segments_[segment];
    const ArcProjection proj = project_onto_polyline(point, s.polyline);
    return {segment, s.way_id, proj.point, std::clamp(proj.distance_along, 0.0, s.length_m), proj.distance};
}

namespace {
void sort_candidates(std::vector<Candidate>& out) {
    std::sort(out.begin(), out.end(), [](const Candidate& a, const Candidate& b) {
        if (a.perpendicular_distance != b.perpendicular_distance) return a.perpendicular_distance < b.perpendicular_distance;
        return a.segment < b.segment;
    });
}
}  // namespace

std::vector<Candidate> RoadGraph::nearest_candidates_scan(const GeoPoint& point, double radius) const {
    std::vector<Candidate> out;
    for (std::size_t i = 0; i < segments_.size(); ++i) {
        Candidate c = candidate_for(i, point);
        if (c.perpendicular_distance <= radius) out.push_back(std::move(c));
    }
    sort_candidates(out);
    return out;
}

std::vector<Candidate> RoadGraph::nearest_candidates(const GeoPoint& point, double radius) const {
    if (segments_.empty()) return {};
    const double dlat = radius / kMetersPerDegLat;
    if (polar_ || std::abs(point.latitude) + dlat > kPolarLimitDeg) return nearest_candidates_scan(point, radius);
    const double dlon = dlat / std::cos((std::abs(point.latitude) + dlat) * kPi / 180.0);

    const auto r0 = cell_of(point.latitude - dlat, cell_deg_), r1 = cell_of(point.latitude + dlat, cell_deg_);
    const auto c0 = cell_of(point.longitude - dlon, cell_deg_), c1 = cell_of(point.longitude + dlon, cell_deg_);
    if (static_cast<std::size_t>((r1 - r0 + 1) * (c1 - c0 + 1)) > kMaxQueryCells) return nearest_candidates_scan(point, radius);

    std::vector<std::size_t> hits;
    for (auto r = r0; r <= r1; ++r) {
        for (auto c = c0; c <= c1; ++c) {
            const auto it = cells_.find(cell_key(r, c));
            if (it != cells_.end()) hits.insert(hits.end(), it->second.begin(), it->second.end());
        }
    }
    std::sort(hits.begin(), hits.end());
    hits.erase(std::unique(hits.begin(), hits.end()), hits.end());

    std::vector<Candidate> out;
    for (std::size_t i : hits) {
        Candidate c = candidate_for(i, point);
        if (c.perpendicular_distance <= radius) out.push_back(std::move(c));
    }
    sort_candidates(out);
    return out;
}

// --- network file ----------------------------------------------------------

RoadGraph parse_network(std::string_view json_text) {
    const json doc = json::parse(json_text, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) throw DataError("network file is not a JSON object");
    std::vector<RoadSegment> segments;
    const auto list = doc.find("segments");
    if (list == doc.end()) return RoadGraph::build({});
    if (!list->is_array()) throw DataError("network 'segments' must be an array");
    for (const auto& js : *list) {
        RoadSegment s;
        const auto& id = js.at("way_id");
        s.way_id = id.is_string() ? id.get<std::string>() : id.dump();
        try {
            for (const auto& c : js.at("coordinates")) {
                s.polyline.push_back({c.at(1).get<double>(), c.at(0).get<double>()});
            }
            if (const auto rc = js.find("road_class"); rc != js.end() && rc->is_string()) {
                s.road_class = parse_road_class(rc->get_ref<const std::string&>());
            }
            if (const auto v = js.find("speed_limit_mph"); v != js.end() && !v->is_null()) {
                s.speed_limit_mps = mph_to_mps(v->get<double>());
            }
            if (const auto v = js.find("lanes"); v != js.end() && !v->is_null()) s.lanes = v->get<int>();
            if (const auto v = js.find("oneway"); v != js.end() && !v->is_null()) s.oneway = v->get<bool>();
        } catch (const json::exception& e) {
            throw DataError(fmt::format("segment '{}' is malformed: {}", s.way_id, e.what()));
        }
        segments.push_back(std::move(s));
    }
    return RoadGraph::build(std::move(segments));
}

RoadGraph load_network(const std::filesystem::path& path) { return parse_network(read_file(path)); }

std::string network_to_json(std::span<const RoadSegment> segments) {
    json list = json::array();
    for (const auto& s : segments) {
        json coords = json::array();
        for (const auto& p : s.polyline) coords.push_back(json::array({p.longitude, p.latitude}));
        json js = {{"way_id", s.way_id}, {"coordinates", std::move(coords)}, {"road_class", to_string(s.road_class)}};
        if (s.speed_limit_mps) js["speed_limit_mph"] = std::round(mps_to_mph(*s.speed_limit_mps) * 1e6) / 1e6;
        if (s.lanes) js["lanes"] = *s.lanes;
        if (s.oneway) js["oneway"] = true;
        list.push_back(std::move(js));
    }
    return json{{"segments", std::move(list)}}.dump(1) + "\n";
}

// --- LRS ------------------------------------------------------------------

std::vector<LrsAttributes> parse_lrs_csv(std::string_view text) {
    std::vector<LrsAttributes> rows;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    bool header = true;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;
        std::vector<std::string_view> cells;
        std::size_t start = 0;
        while (true) {
            const auto comma = line.find(',', start);
            cells.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
            if (comma == std::string_view::npos) break;
            start = comma + 1;
        }
        if (header) {
            header = false;
            if (cells.size() != 5 || cells[0] != "way_id" || cells[1] != "route_name" || cells[2] != "direction" ||
                cells[3] != "mile_start" || cells[4] != "mile_end") {
                throw DataError("LRS header must be way_id,route_name,direction,mile_start,mile_end");
            }
            continue;
        }
        if (cells.size() != 5) throw DataError(fmt::format("LRS line {} has {} fields, expected 5", line_no, cells.size()));
        LrsAttributes a{std::string(cells[0]), std::string(cells[1]), std::string(cells[2]), 0.0, 0.0};
        auto num = [&](std::string_view s, double& out) {
            const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
            return r.ec == std::errc{} && r.ptr == s.data() + s.size();
        };
        if (a.way_id.empty() || !num(cells[3], a.mile_start) || !num(cells[4], a.mile_end)) {
            throw DataError(fmt::format("LRS line {} is malformed", line_no));
        }
        if (a.mile_start > a.mile_end) throw DataError(fmt::format("LRS line {}: mile_start exceeds mile_end", line_no));
        rows.push_back(std::move(a));
    }
    return rows;
}

std::vector<LrsAttributes> load_lrs(const std::filesystem::path& path) { return parse_lrs_csv(read_file(path)); }

std::string lrs_to_csv(std::span<const LrsAttributes> rows) {
    std::string out = "way_id,route_name,direction,mile_start,mile_end\n";
    for (const auto& r : rows) {
        out += fmt::format("{},{},{},{},{}\n", r.way_id, r.route_name, r.direction, r.mile_start, r.mile_end);
    }
    return out;
}

ConflationResult conflate_lrs(RoadGraph graph, std::span<const LrsAttributes> table) {
    std::set<std::string_view> seen;
    for (const auto& row : table) {
        if (!seen.insert(row.way_id).second) throw DataError(fmt::format("LRS table lists way_id '{}' twice", row.way_id));
    }
    ConflationResult out;
    for (const auto& row : table) {
        const auto i = graph.find(row.way_id);
        if (!i) {
            out.unmatched.push_back(row);
            continue;
        }
        graph.segments_[*i].lrs = row;
    }
    out.graph = std::move(graph);
    return out;
}

// --- regions --------------------------------------------------------------

namespace {

double orient(const GeoPoint& a, const GeoPoint& b, const GeoPoint& c) {
    return (b.longitude - a.longitude) * (c.latitude - a.latitude) - (b.latitude - a.latitude) * (c.longitude - a.longitude);
}

bool segments_cross(const GeoPoint& a, const GeoPoint& b, const GeoPoint& c, const GeoPoint& d) {
    const double d1 = orient(c, d, a), d2 = orient(c, d, b), d3 = orient(a, b, c), d4 = orient(a, b, d);
    return ((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0));
}

bool on_edge(const GeoPoint& p, const GeoPoint& a, const GeoPoint& b) {
    constexpr double kEps = 1e-12;
    const double len = std::hypot(b.longitude - a.longitude, b.latitude - a.latitude);
    if (std::abs(orient(a, b, p)) > kEps * std::max(len, 1.0)) return false;
    return p.longitude >= std::min(a.longitude, b.longitude) - kEps && p.longitude <= std::max(a.longitude, b.longitude) + kEps &&
           p.latitude >= std::min(a.latitude, b.latitude) - kEps && p.latitude <= std::max(a.latitude, b.latitude) + kEps;
}

// 1 inside, 0 outside, 2 on boundary.
int locate(const GeoPoint& p, const std::vector<GeoPoint>& ring) {
    bool inside = false;
    for (std::size_t i = 1; i < ring.size(); ++i) {
        const GeoPoint& a = ring[i - 1];
        const GeoPoint& b = ring[i];
        if (on_edge(p, a, b)) return 2;
        if ((a.latitude > p.latitude) != (b.latitude > p.latitude)) {
            const double x = a.longitude + (p.latitude - a.latitude) * (b.longitude - a.longitude) / (b.latitude - a.latitude);
            if (p.longitude < x) inside = !inside;
        }
    }
    return inside ? 1 : 0;
}

}  // namespace

RegionIndex::RegionIndex(std::vector<Region> regions) : regions_(std::move(regions)) {
    for (const auto& r : regions_) {
        const auto& ring = r.ring;
        if (ring.size() < 4) throw DataError(fmt::format("region '{}' ring needs at least 4 vertices", r.postal_code));
        if (!(ring.front() == ring.back())) throw DataError(fmt::format("region '{}' ring is not closed", r.postal_code));
        const std::size_t edges = ring.size() - 1;
        for (std::size_t i = 0; i < edges; ++i) {
            for (std::size_t j = i + 2; j < edges; ++j) {
                if (i == 0 && j == edges - 1) continue;  // adjacent through the closing vertex
                if (segments_cross(ring[i], ring[i + 1], ring[j], ring[j + 1])) {
                    throw DataError(fmt::format("region '{}' ring self-intersects", r.postal_code));
                }
            }
        }
    }
    std::stable_sort(regions_.begin(), regions_.end(),
                     [](const Region& a, const Region& b) { return a.postal_code < b.postal_code; });
}

RegionIndex parse_regions(std::string_view json_text) {
    const json doc = json::parse(json_text, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) throw DataError("regions file is not a JSON object");
    std::vector<Region> regions;
    try {
        for (const auto& jr : doc.value("regions", json::array())) {
            Region r;
            r.postal_code = jr.at("postal_code").get<std::string>();
            for (const auto& c : jr.at("ring")) r.ring.push_back({c.at(1).get<double>(), c.at(0).get<double>()});
            regions.push_back(std::move(r));
        }
    } catch (const json::exception& e) {
        throw DataError(fmt::format("regions file is malformed: {}", e.what()));
    }
    return RegionIndex(std::move(regions));
}

RegionIndex load_regions(const std::filesystem::path& path) { return parse_regions(read_file(path)); }

std::string regions_to_json(std::span<const Region> regions) {
    json list = json::array();
    for (const auto& r : regions) {
        json ring = json::array();
        for (const auto& p : r.ring) ring.push_back(json::array({p.longitude, p.latitude}));
        list.push_back({{"postal_code", r.postal_code}, {"ring", std::move(ring)}});
    }
    return json{{"regions", std::move(list)}}.dump(1) + "\n";
}

std::optional<std::string> zip_lookup(const GeoPoint& point, const RegionIndex& regions) {
    // Regions are sorted by code, so the first match is the smallest.
    for (const auto& r : regions.regions()) {
        if (locate(point, r.ring) != 0) return r.postal_code;
    }
    return std::nullopt;
}

}  // namespace telematics
