#include "telematics/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <queue>
#include <unordered_map>

#include <fmt/format.h>
#include "json.hpp"

#include "record_json.hpp"
#include "telematics/errors.hpp"
#include "telematics/records_io.hpp"

namespace telematics {

using nlohmann::json;

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}  // namespace

void MatchParams::validate() const {
    auto positive = [](double v, const char* name) {
        if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(fmt::format("match parameter {} must be positive", name));
    };
    positive(sigma_gps_m, "sigma_gps");
    positive(beta_m, "beta");
    positive(candidate_radius_m, "candidate_radius");
    positive(max_time_gap_s, "max_time_gap");
    positive(max_route_ratio, "max_route_ratio");
    if (max_route_ratio < 1.0) throw ConfigError("match parameter max_route_ratio must be at least 1");
}

// --- HMM ---------------------------------------------------------------------

ViterbiPath viterbi_decode(std::span<const LatticeStep> steps) {
    ViterbiPath out;
    if (steps.empty()) return out;

    const std::size_t n = steps.size();
    std::vector<std::vector<double>> score(n);
    std::vector<std::vector<std::size_t>> back(n);
    out.restarts.assign(n, false);
    out.restarts[0] = true;
    score[0] = steps[0].emission_log;

    for (std::size_t t = 1; t < n; ++t) {
        const auto& step = steps[t];
        const std::size_t k = step.emission_log.size();
        score[t].assign(k, kNegInf);
        back[t].assign(k, 0);
        bool reachable = false;
        for (std::size_t j = 0; j < k; ++j) {
            double best = kNegInf;
            std::size_t arg = 0;
            for (std::size_t i = 0; i < score[t - 1].size(); ++i) {
                const double v = score[t - 1][i] + step.transition_log[i][j];
                if (v > best) {
                    best = v;
                    arg = i;
                }
            }
            if (best > kNegInf) {
                score[t][j] = best + step.emission_log[j];
                back[t][j] = arg;
                reachable = true;
            }
        }
        if (!reachable) {
            out.restarts[t] = true;
            score[t] = step.emission_log;
        }
    }

    auto argmax = [](const std::vector<double>& v) {
        std::size_t arg = 0;
        for (std::size_t i = 1; i < v.size(); ++i) {
            if (v[i] > v[arg]) arg = i;
        }
        return arg;
    };

    out.states.assign(n, 0);
    out.states[n - 1] = argmax(score[n - 1]);
    for (std::size_t t = n - 1; t > 0; --t) {
        out.states[t - 1] = out.restarts[t] ? argmax(score[t - 1]) : back[t][out.states[t]];
    }
    return out;
}

double emission_log_weight(double perpendicular_distance_m, const MatchParams& params) noexcept {
    return -(perpendicular_distance_m * perpendicular_distance_m) / (2.0 * params.sigma_gps_m * params.sigma_gps_m);
}

double transition_log_weight(double route_distance_m, double great_circle_m, const MatchParams& params) noexcept {
    if (!std::isfinite(route_distance_m)) return kNegInf;
    return -std::abs(route_distance_m - great_circle_m) / params.beta_m;
}

std::vector<double> route_distances(const RoadGraph& graph, const Candidate& from, std::span<const Candidate> to,
                                    double bound) {
    const auto& segs = graph.segments();
    const RoadSegment& src = segs[from.segment];

    // Bounded best-first expansion over nodes.
    std::unordered_map<std::size_t, double> dist;
    using Item = std::pair<double, std::size_t>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> frontier;
    auto relax = [&](std::size_t node, double d) {
        if (d > bound) return;
        auto [it, inserted] = dist.try_emplace(node, d);
        if (!inserted) {
            if (d >= it->second) return;
            it->second = d;
        }
        frontier.emplace(d, node);
    };
    relax(src.to_node, src.length_m - from.distance_along);
    if (!src.oneway) relax(src.from_node, from.distance_along);

    while (!frontier.empty()) {
        const auto [d, node] = frontier.top();
        frontier.pop();
        if (d > dist[node]) continue;
        for (const GraphEdge& e : graph.edges_from(node)) relax(e.to_node, d + e.length_m);
    }

    auto reach = [&](std::size_t node) {
        const auto it = dist.find(node);
        return it == dist.end() ? kInf : it->second;
    };

    std::vector<double> out(to.size(), kInf);
    for (std::size_t k = 0; k < to.size(); ++k) {
        const Candidate& c = to[k];
        const RoadSegment& dst = segs[c.segment];
        double best = reach(dst.from_node) + c.distance_along;
        if (!dst.oneway) best = std::min(best, reach(dst.to_node) + (dst.length_m - c.distance_along));
        if (c.segment == from.segment) best = std::min(best, std::abs(c.distance_along - from.distance_along));
        out[k] = best <= bound ? best : kInf;
    }
    return out;
}

// --- matching ------------------------------------------------------------------

std::size_t MatchedTrip::matched_count() const noexcept {
    return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [](const MatchEntry& e) { return e.match.has_value(); }));
}

namespace {

MatchedPosition to_position(const Candidate& c) {
    return {c.way_id, c.snapped_point, c.distance_along, c.perpendicular_distance};
}

// Decodes points[begin, end), all of which have candidates, into out.
void decode_run(std::span<const RawPointRecord> points, const std::vector<std::vector<Candidate>>& candidates,
                std::size_t begin, std::size_t end, const RoadGraph& graph, const MatchParams& params,
                std::vector<MatchEntry>& out, std::size_t& chunk) {
    std::vector<LatticeStep> steps(end - begin);
    for (std::size_t t = begin; t < end; ++t) {
        LatticeStep& step = steps[t - begin];
        const auto& cur = candidates[t];
        step.emission_log.reserve(cur.size());
        for (const auto& c : cur) step.emission_log.push_back(emission_log_weight(c.perpendicular_distance, params));
        if (t == begin) continue;
        const auto& prev = candidates[t - 1];
        const double gc = haversine_distance(points[t - 1].position(), points[t].position());
        const double bound = params.max_route_ratio * gc;
        step.transition_log.resize(prev.size());
        for (std::size_t i = 0; i < prev.size(); ++i) {
            const auto routes = route_distances(graph, prev[i], cur, bound);
            step.transition_log[i].resize(cur.size());
            for (std::size_t j = 0; j < cur.size(); ++j) {
                step.transition_log[i][j] = transition_log_weight(routes[j], gc, params);
            }
        }
    }

    const ViterbiPath path = viterbi_decode(steps);
    for (std::size_t t = begin; t < end; ++t) {
        if (path.restarts[t - begin]) ++chunk;
        out.push_back({points[t], to_position(candidates[t][path.states[t - begin]]), chunk});
    }
}

}  // namespace

MatchedTrip match_points(std::span<const RawPointRecord> points, const RoadGraph& graph, const MatchParams& params) {
    MatchedTrip out;
    if (!points.empty()) out.journey_id = points.front().journey_id;
    out.entries.reserve(points.size());

    std::vector<std::vector<Candidate>> candidates(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        candidates[i] = graph.nearest_candidates(points[i].position(), params.candidate_radius_m);
    }

    const auto max_gap_ms = params.max_time_gap_s * 1000.0;
    std::size_t chunk = 0;  // first decoded run becomes chunk 1
    std::size_t i = 0;
    while (i < points.size()) {
        if (candidates[i].empty()) {
            out.entries.push_back({points[i], std::nullopt, chunk});
            ++i;
            continue;
        }
        std::size_t j = i + 1;
        while (j < points.size() && !candidates[j].empty() &&
               static_cast<double>(points[j].timestamp_ms - points[j - 1].timestamp_ms) <= max_gap_ms) {
            ++j;
        }
        decode_run(points, candidates, i, j, graph, params, out.entries, chunk);
        i = j;
    }
    return out;
}

MatchedTrip match_trip(const Trip& trip, const RoadGraph& graph, const MatchParams& params) {
    MatchedTrip out = match_points(trip.points, graph, params);
    out.journey_id = trip.journey_id;
    return out;
}

std::vector<Traversal> segment_traversals(const MatchedTrip& trip) {
    std::vector<Traversal> out;
    bool open = false;
    for (const MatchEntry& e : trip.entries) {
        if (!e.match) {
            open = false;
            continue;
        }
        if (!open || out.back().way_id != e.match->way_id || out.back().points.back().chunk != e.chunk) {
            Traversal t;
            t.journey_id = trip.journey_id;
            t.way_id = e.match->way_id;
            t.run_index = out.size();
            t.entry_time_ms = e.source.timestamp_ms;
            out.push_back(std::move(t));
            open = true;
        }
        out.back().points.push_back(e);
        out.back().exit_time_ms = e.source.timestamp_ms;
    }
    return out;
}

// --- matched file ----------------------------------------------------------------

std::string format_matched_file(std::string_view file_id, std::span<const MatchedTrip> trips) {
    std::size_t points = 0, matched = 0;
    for (const auto& t : trips) {
        points += t.entries.size();
        matched += t.matched_count();
    }
    std::string out = fmt::format("{{\"file_id\":{},\"journey_count\":{},\"point_count\":{},\"matched_point_count\":{}}}\n",
                                  json_quote(file_id), trips.size(), points, matched);
    for (const auto& t : trips) {
        for (const auto& e : t.entries) {
            std::string line = format_record(e.source);
            line.pop_back();
            if (e.match) {
                line += fmt::format(",\"way_id\":{},\"snapped_lat\":{},\"snapped_lon\":{},\"distance_along_m\":{},\"chunk\":{}}}",
                                    json_quote(e.match->way_id), e.match->snapped_point.latitude,
                                    e.match->snapped_point.longitude, e.match->distance_along_m, e.chunk);
            } else {
                line += fmt::format(",\"way_id\":\"\",\"snapped_lat\":null,\"snapped_lon\":null,\"distance_along_m\":null,\"chunk\":{}}}",
                                    e.chunk);
            }
            out += line;
            out += '\n';
        }
    }
    return out;
}

MatchedFile read_matched_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError(fmt::format("matched file '{}' is unreadable", path.string()));
    MatchedFile out;
    std::string line;
    if (!std::getline(in, line)) throw DataError(fmt::format("matched file '{}' is empty", path.string()));
    const json head = json::parse(line, nullptr, false);
    if (head.is_discarded() || !head.contains("file_id")) throw DataError(fmt::format("matched file '{}' has no header", path.string()));
    out.file_id = head["file_id"].get<std::string>();
    const auto expected_points = head.value("point_count", std::size_t{0});

    std::size_t line_no = 1, points = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const json obj = json::parse(line, nullptr, false);
        auto rec = obj.is_object() ? detail::record_from_json(obj, SpeedUnit::mps) : std::nullopt;
        if (!rec || !obj.contains("way_id")) {
            throw DataError(fmt::format("matched file '{}' line {} is malformed", path.string(), line_no));
        }
        MatchEntry e;
        e.source = std::move(*rec);
        e.chunk = obj.value("chunk", std::size_t{0});
        const auto& way = obj["way_id"];
        if (way.is_string() && !way.get_ref<const std::string&>().empty()) {
            try {
                e.match = MatchedPosition{way.get<std::string>(),
                                          {obj.at("snapped_lat").get<double>(), obj.at("snapped_lon").get<double>()},
                                          obj.at("distance_along_m").get<double>(),
                                          haversine_distance(e.source.position(), {obj.at("snapped_lat").get<double>(),
                                                                                  obj.at("snapped_lon").get<double>()})};
            } catch (const json::exception&) {
                throw DataError(fmt::format("matched file '{}' line {} lacks snapped fields", path.string(), line_no));
            }
        }
        if (out.trips.empty() || out.trips.back().journey_id != e.source.journey_id) {
            out.trips.push_back({e.source.journey_id, {}});
        }
        out.trips.back().entries.push_back(std::move(e));
        ++points;
    }
    if (points != expected_points) {
        throw DataError(fmt::format("matched file '{}' holds {} points, header says {}", path.string(), points, expected_points));
    }
    return out;
}

}  // namespace telematics
