#include "telematics/synthgen.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <queue>
#include <random>
#include <set>

#include <fmt/format.h>
#include "json.hpp"

#include "telematics/errors.hpp"
#include "telematics/records_io.hpp"

namespace telematics {

namespace {

// Distribution transforms written out by hand: std:: distributions are not
// specified bit-for-bit, and the corpus must be identical across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    std::size_t index(std::size_t n) {
        return std::min(n - 1, static_cast<std::size_t>(uniform() * static_cast<double>(n)));
    }
    bool bernoulli(double p) { return uniform() < p; }
    double normal() {
        if (spare_) {
            const double v = *spare_;
            spare_.reset();
            return v;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * kPi * u2);
        return r * std::cos(2.0 * kPi * u2);
    }

private:
    std::mt19937_64 engine_;
    std::optional<double> spare_;
};

constexpr double kCongestedMinMps = 4.0;
constexpr double kCongestedMaxMps = 8.0;
constexpr double kSpeedJitterMps = 0.3;
// Samples are kept this far past a node so the true way is unambiguous on turns.
constexpr double kNodeClearanceM = 5.0;

// Relative trip-start weight per local hour: morning, noon and evening peaks.
constexpr std::array<double, 24> kHourWeights = {1, 1, 1, 1, 1, 2, 4, 8, 9, 6, 5, 6,
                                                 8, 6, 5, 6, 8, 10, 8, 5, 4, 3, 2, 1};

struct ClassSpec {
    RoadClass road_class;
    double limit_mph;
    int lanes;
};

constexpr ClassSpec kMotorway{RoadClass::motorway, 65.0, 3};
constexpr ClassSpec kArterial{RoadClass::arterial, 45.0, 2};
constexpr ClassSpec kCollector{RoadClass::collector, 35.0, 2};
constexpr ClassSpec kLocal{RoadClass::local, 25.0, 1};

double round_to(double v, double scale) { return std::round(v * scale) / scale; }

struct Leg {
    std::size_t segment;
    bool forward;  // travelling first vertex -> last vertex
};

struct GridGraph {
    int cols = 0;
    std::vector<std::vector<std::pair<std::size_t, int>>> adjacency;  // (segment, other node)
    std::vector<int> seg_from, seg_to;
};

GridGraph grid_graph(const SynthNetwork& net) {
    GridGraph g;
    g.cols = net.cols;
    const auto node = [&](int i, int j) { return i * (net.cols + 1) + j; };
    g.adjacency.resize(static_cast<std::size_t>((net.rows + 1) * (net.cols + 1)));
    // Segment order mirrors generate_network: horizontals row-major, then verticals.
    for (int i = 0; i <= net.rows; ++i) {
        for (int j = 0; j < net.cols; ++j) {
            g.seg_from.push_back(node(i, j));
            g.seg_to.push_back(node(i, j + 1));
        }
    }
    for (int i = 0; i < net.rows; ++i) {
        for (int j = 0; j <= net.cols; ++j) {
            g.seg_from.push_back(node(i, j));
            g.seg_to.push_back(node(i + 1, j));
        }
    }
    for (std::size_t s = 0; s < g.seg_from.size(); ++s) {
        g.adjacency[static_cast<std::size_t>(g.seg_from[s])].push_back({s, g.seg_to[s]});
        g.adjacency[static_cast<std::size_t>(g.seg_to[s])].push_back({s, g.seg_from[s]});
    }
    return g;
}

// Fastest route by free-flow travel time; ties resolve to the lower node index.
std::vector<Leg> fastest_route(const SynthNetwork& net, const GridGraph& g, int from, int to) {
    const std::size_t n = g.adjacency.size();
    std::vector<double> best(n, std::numeric_limits<double>::infinity());
    std::vector<std::pair<int, std::size_t>> via(n, {-1, 0});
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
    best[static_cast<std::size_t>(from)] = 0.0;
    queue.push({0.0, from});
    while (!queue.empty()) {
        const auto [d, u] = queue.top();
        queue.pop();
        if (d > best[static_cast<std::size_t>(u)]) continue;
        if (u == to) break;
        for (const auto& [seg, v] : g.adjacency[static_cast<std::size_t>(u)]) {
            const auto& s = net.segments[seg];
            const double nd = d + s.length_m / *s.speed_limit_mps;
            if (nd < best[static_cast<std::size_t>(v)]) {
                best[static_cast<std::size_t>(v)] = nd;
                via[static_cast<std::size_t>(v)] = {u, seg};
                queue.push({nd, v});
            }
        }
    }
    std::vector<Leg> legs;
    for (int v = to; v != from;) {
        const auto [u, seg] = via[static_cast<std::size_t>(v)];
        legs.push_back({seg, g.seg_from[seg] == u});
        v = u;
    }
    std::reverse(legs.begin(), legs.end());
    return legs;
}

std::int64_t local_midnight_utc_ms(std::chrono::year_month_day day, int tz_offset_minutes) {
    using namespace std::chrono;
    const sys_days d{day};
    const auto local_ms = duration_cast<milliseconds>(d.time_since_epoch()).count();
    return local_ms - static_cast<std::int64_t>(tz_offset_minutes) * 60'000;
}

std::string format_raw_line(const RawPointRecord& r) {
    std::string out = fmt::format(R"({{"journey_id":{},"timestamp":{},"latitude":{},"longitude":{},)",
                                  json_quote(r.journey_id), r.timestamp_ms, r.latitude, r.longitude);
    if (r.heading) out += fmt::format(R"("heading":{},)", *r.heading);
    out += fmt::format(R"("speed":{},"ignition":"{}","metadata":{{)", r.speed_mps, to_string(r.ignition));
    bool first = true;
    const auto field = [&](std::string_view key, const std::optional<std::string>& v) {
        if (!v) return;
        out += fmt::format(R"({}"{}":{})", first ? "" : ",", key, json_quote(*v));
        first = false;
    };
    field("geohash", r.geohash);
    field("postal_code", r.postal_code);
    field("country_code", r.country_code);
    out += "}}";
    return out;
}

}  // namespace

void SynthConfig::validate() const {
    if (grid_rows < 1 || grid_cols < 1) throw ConfigError("grid_rows and grid_cols must be >= 1");
    if (n_trips < 1 || shard_count < 1 || split_degree < 1) {
        throw ConfigError("n_trips, shard_count and split_degree must be >= 1");
    }
    if (!(segment_length_m > 0.0) || !(sampling_period_s > 0.0)) {
        throw ConfigError("segment_length_m and sampling_period_s must be positive");
    }
    if (!(gps_noise_sigma_m >= 0.0) || !std::isfinite(gps_noise_sigma_m)) {
        throw ConfigError("gps_noise_sigma_m must be finite and >= 0");
    }
    for (double r : {duplicate_rate, congested_fraction, invalid_rate, postal_code_rate}) {
        if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("rates must lie in [0, 1]");
    }
    if (region_rows < 1 || region_cols < 1 || region_rows > grid_rows + 1 || region_cols > grid_cols + 1) {
        throw ConfigError("region_rows/region_cols must be in [1, grid size + 1]");
    }
    if (!is_valid(GeoPoint{origin_lat, origin_lon}) || std::abs(origin_lat) > 80.0) {
        throw ConfigError("origin must be a valid coordinate below 80 degrees latitude");
    }
    if (!parse_date(start_date)) throw ConfigError(fmt::format("start_date '{}' is not YYYY-MM-DD", start_date));
    if (span_days < 1) throw ConfigError("span_days must be >= 1");
    if (min_hour < 0 || max_hour > 23 || min_hour > max_hour) throw ConfigError("hour window must lie in 0-23");
}

SynthNetwork generate_network(const SynthConfig& config) {
    config.validate();
    SynthNetwork net;
    net.rows = config.grid_rows;
    net.cols = config.grid_cols;
    net.dlat_deg = config.segment_length_m / kEarthRadiusMeters * 180.0 / kPi;
    const double center_lat = config.origin_lat + net.rows * net.dlat_deg / 2.0;
    net.dlon_deg = net.dlat_deg / std::cos(center_lat * kPi / 180.0);

    const auto at = [&](double i, double j) {
        return GeoPoint{config.origin_lat + i * net.dlat_deg, config.origin_lon + j * net.dlon_deg};
    };
    const int motorway_row = net.rows / 2;
    const int arterial_col = net.cols / 2;
    const auto add = [&](std::string id, GeoPoint a, GeoPoint b, const ClassSpec& spec) {
        RoadSegment s;
        s.way_id = std::move(id);
        s.polyline = {a, b};
        s.road_class = spec.road_class;
        s.speed_limit_mps = mph_to_mps(spec.limit_mph);
        s.lanes = spec.lanes;
        s.length_m = haversine_distance(a, b);
        net.segments.push_back(std::move(s));
    };
    for (int i = 0; i <= net.rows; ++i) {
        const ClassSpec& spec = i == motorway_row ? kMotorway : (i % 3 == 0 ? kCollector : kLocal);
        for (int j = 0; j < net.cols; ++j) add(fmt::format("h{}_{}", i, j), at(i, j), at(i, j + 1), spec);
    }
    for (int i = 0; i < net.rows; ++i) {
        for (int j = 0; j <= net.cols; ++j) {
            const ClassSpec& spec = j == arterial_col ? kArterial : (j % 3 == 0 ? kCollector : kLocal);
            add(fmt::format("v{}_{}", i, j), at(i, j), at(i + 1, j), spec);
        }
    }

    double mile = 0.0;
    for (int j = 0; j < net.cols; ++j) {
        const auto& s = net.segments[static_cast<std::size_t>(motorway_row * net.cols + j)];
        const double next = mile + s.length_m / kMetersPerMile;
        net.lrs.push_back({s.way_id, "Route 1", "EB", round_to(mile, 1e4), round_to(next, 1e4)});
        mile = next;
    }
    mile = 0.0;
    const std::size_t verticals = static_cast<std::size_t>((net.rows + 1) * net.cols);
    for (int i = 0; i < net.rows; ++i) {
        const auto& s = net.segments[verticals + static_cast<std::size_t>(i * (net.cols + 1) + arterial_col)];
        const double next = mile + s.length_m / kMetersPerMile;
        net.lrs.push_back({s.way_id, "Route 2", "NB", round_to(mile, 1e4), round_to(next, 1e4)});
        mile = next;
    }

    // Region edges sit mid-cell so that no node lies on a boundary.
    const auto edges = [](int nodes, int parts) {
        std::vector<double> e{-0.5};
        for (int k = 1; k < parts; ++k) e.push_back(static_cast<double>(k * nodes / parts) - 0.5);
        e.push_back(static_cast<double>(nodes) - 0.5);
        return e;
    };
    const auto lat_edges = edges(net.rows + 1, config.region_rows);
    const auto lon_edges = edges(net.cols + 1, config.region_cols);
    for (int r = 0; r < config.region_rows; ++r) {
        for (int c = 0; c < config.region_cols; ++c) {
            const double i0 = lat_edges[static_cast<std::size_t>(r)], i1 = lat_edges[static_cast<std::size_t>(r + 1)];
            const double j0 = lon_edges[static_cast<std::size_t>(c)], j1 = lon_edges[static_cast<std::size_t>(c + 1)];
            net.regions.push_back({fmt::format("{:05d}", 23450 + r * config.region_cols + c),
                                   {at(i0, j0), at(i0, j1), at(i1, j1), at(i1, j0), at(i0, j0)}});
        }
    }
    return net;
}

std::vector<SynthTrip> generate_trips(const SynthNetwork& network, const SynthConfig& config) {
    config.validate();
    Rng rng(config.seed);
    const GridGraph g = grid_graph(network);
    const RegionIndex regions(network.regions);
    const auto first_day = *parse_date(config.start_date);

    std::vector<double> hour_cdf;
    double acc = 0.0;
    for (int h = 0; h < 24; ++h) {
        acc += (h >= config.min_hour && h <= config.max_hour) ? kHourWeights[static_cast<std::size_t>(h)] : 0.0;
        hour_cdf.push_back(acc);
    }

    const int node_cols = network.cols + 1;
    const std::size_t node_count = g.adjacency.size();
    std::vector<SynthTrip> trips;
    trips.reserve(config.n_trips);
    for (std::size_t t = 0; t < config.n_trips; ++t) {
        SynthTrip trip;
        trip.journey_id = fmt::format("{}{:06d}", config.journey_prefix, config.journey_offset + t);

        int from = 0, to = 0;
        do {
            from = static_cast<int>(rng.index(node_count));
            to = static_cast<int>(rng.index(node_count));
        } while (std::abs(from / node_cols - to / node_cols) + std::abs(from % node_cols - to % node_cols) < 2);
        const auto legs = fastest_route(network, g, from, to);

        trip.congested = rng.bernoulli(config.congested_fraction);
        std::vector<double> speeds;
        for (const auto& leg : legs) {
            trip.route.push_back(network.segments[leg.segment].way_id);
            speeds.push_back(trip.congested ? rng.uniform(kCongestedMinMps, kCongestedMaxMps)
                                            : *network.segments[leg.segment].speed_limit_mps * rng.uniform(0.85, 1.1));
        }
        const bool with_postal = rng.bernoulli(config.postal_code_rate);

        const auto day = std::chrono::sys_days{first_day} + std::chrono::days{static_cast<int>(rng.index(
                                                                 static_cast<std::size_t>(config.span_days)))};
        const double pick = rng.uniform() * hour_cdf.back();
        const int hour = static_cast<int>(std::upper_bound(hour_cdf.begin(), hour_cdf.end(), pick) - hour_cdf.begin());
        const auto second = static_cast<std::int64_t>(rng.index(3600));
        const std::int64_t start_ms = local_midnight_utc_ms(std::chrono::year_month_day{day}, config.tz_offset_minutes) +
                                      (hour * 3600LL + second) * 1000;

        const double end_at = network.segments[legs.back().segment].length_m * (1.0 - rng.uniform(0.05, 0.25));
        std::size_t k = 0;
        double s = network.segments[legs.front().segment].length_m * rng.uniform(0.05, 0.25);
        const auto period_ms = static_cast<std::int64_t>(std::llround(config.sampling_period_s * 1000.0));

        for (std::int64_t step = 0;; ++step) {
            const Leg& leg = legs[k];
            const RoadSegment& seg = network.segments[leg.segment];
            const double s_pos = k > 0 ? std::max(s, kNodeClearanceM) : s;
            const double along = leg.forward ? s_pos : seg.length_m - s_pos;
            const GeoPoint truth = interpolate_along(seg.polyline, along);
            const GeoPoint head_from = leg.forward ? seg.polyline.front() : seg.polyline.back();
            const GeoPoint head_to = leg.forward ? seg.polyline.back() : seg.polyline.front();

            GeoPoint observed = truth;
            if (config.gps_noise_sigma_m > 0.0) {
                const double east = rng.normal() * config.gps_noise_sigma_m;
                const double north = rng.normal() * config.gps_noise_sigma_m;
                observed = offset_meters(truth, east, north);
            }
            RawPointRecord r;
            r.journey_id = trip.journey_id;
            r.timestamp_ms = start_ms + step * period_ms;
            r.latitude = observed.latitude;
            r.longitude = observed.longitude;
            r.heading = round_to(initial_bearing(head_from, head_to), 1e3);
            if (*r.heading >= 360.0) *r.heading = 0.0;
            r.speed_mps = std::max(0.0, speeds[k] + rng.normal() * kSpeedJitterMps);
            r.ignition = Ignition::on;
            r.geohash = geohash_encode(observed, 7);
            if (with_postal) r.postal_code = zip_lookup(truth, regions);
            r.country_code = "US";
            trip.points.push_back(std::move(r));
            trip.true_positions.push_back(truth);
            trip.way_labels.push_back(seg.way_id);

            // Advance one sampling period along the route.
            double dt = config.sampling_period_s;
            bool finished = false;
            while (dt > 0.0) {
                const bool last = k + 1 == legs.size();
                const double limit = last ? end_at : network.segments[legs[k].segment].length_m;
                const double needed = (limit - s) / speeds[k];
                if (needed > dt) {
                    s += speeds[k] * dt;
                    dt = 0.0;
                } else if (last) {
                    finished = true;
                    break;
                } else {
                    dt -= needed;
                    ++k;
                    s = 0.0;
                }
            }
            if (finished) break;
        }
        trips.push_back(std::move(trip));
    }
    return trips;
}

std::vector<SynthTrip> with_fresh_ids(const std::vector<SynthTrip>& trips, const std::string& suffix) {
    std::vector<SynthTrip> out = trips;
    for (auto& t : out) {
        t.journey_id += suffix;
        for (auto& p : t.points) p.journey_id = t.journey_id;
    }
    return out;
}

SynthGroundTruth emit_shards(const std::vector<SynthTrip>& trips, const SynthConfig& config,
                             const std::filesystem::path& dir, const std::filesystem::path& ground_truth) {
    config.validate();
    Rng rng(config.seed ^ 0x5851f42d4c957f2dULL);
    SynthGroundTruth counts;
    counts.trips = trips.size();
    std::vector<std::vector<std::string>> shards(config.shard_count);

    for (const auto& trip : trips) {
        const std::size_t n = trip.points.size();
        if (n == 0) continue;
        const std::size_t pieces = std::min(n, 1 + rng.index(config.split_degree));
        std::set<std::size_t> cuts;
        while (cuts.size() + 1 < pieces) cuts.insert(1 + rng.index(n - 1));
        cuts.insert(n);
        std::size_t begin = 0;
        for (std::size_t end : cuts) {
            auto& shard = shards[rng.index(config.shard_count)];
            for (std::size_t i = begin; i < end; ++i) {
                const RawPointRecord& p = trip.points[i];
                shard.push_back(format_raw_line(p));
                ++counts.unique_points;
                if (rng.bernoulli(config.duplicate_rate)) {
                    shards[rng.index(config.shard_count)].push_back(format_raw_line(p));
                    ++counts.injected_duplicates;
                }
                if (rng.bernoulli(config.invalid_rate)) {
                    RawPointRecord bad = p;
                    bad.latitude = 95.0;
                    bad.timestamp_ms += 1;
                    shards[rng.index(config.shard_count)].push_back(format_raw_line(bad));
                    ++counts.injected_invalid;
                }
            }
            begin = end;
        }
    }
    counts.total_records = counts.unique_points + counts.injected_duplicates + counts.injected_invalid;

    std::filesystem::create_directories(dir);
    for (std::size_t s = 0; s < shards.size(); ++s) {
        auto& lines = shards[s];
        for (std::size_t i = lines.size(); i > 1; --i) std::swap(lines[i - 1], lines[rng.index(i)]);
        const std::string id = fmt::format("shard-{:03d}", s);
        std::string text = fmt::format(R"({{"header":{{"format":"raw-shard","shard_id":"{}","speed_unit":"mps"}}}})", id);
        text += '\n';
        for (const auto& l : lines) {
            text += l;
            text += '\n';
        }
        write_file_atomic(dir / (id + ".ndjson"), text);
    }
    write_file_atomic(ground_truth, ground_truth_json(trips, config, counts));
    return counts;
}

void write_network(const SynthNetwork& network, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_file_atomic(dir / "network.json", network_to_json(network.segments));
    write_file_atomic(dir / "lrs.csv", lrs_to_csv(network.lrs));
    write_file_atomic(dir / "regions.json", regions_to_json(network.regions));
}

std::string ground_truth_json(const std::vector<SynthTrip>& trips, const SynthConfig& config,
                              const SynthGroundTruth& counts) {
    using ojson = nlohmann::ordered_json;
    ojson doc;
    doc["seed"] = config.seed;
    doc["total_records"] = counts.total_records;
    doc["unique_points"] = counts.unique_points;
    doc["injected_duplicates"] = counts.injected_duplicates;
    doc["injected_invalid"] = counts.injected_invalid;
    doc["trip_count"] = counts.trips;
    doc["trips"] = ojson::array();
    for (const auto& t : trips) {
        ojson jt;
        jt["journey_id"] = t.journey_id;
        jt["congested"] = t.congested;
        jt["route"] = t.route;
        ojson ts = ojson::array();
        for (const auto& p : t.points) ts.push_back(p.timestamp_ms);
        jt["timestamps"] = std::move(ts);
        jt["way_labels"] = t.way_labels;
        doc["trips"].push_back(std::move(jt));
    }
    return doc.dump() + "\n";
}

std::string geohash_encode(const GeoPoint& p, int precision) {
    static constexpr std::string_view kAlphabet = "0123456789bcdefghjkmnpqrstuvwxyz";
    double lat_lo = -90.0, lat_hi = 90.0, lon_lo = -180.0, lon_hi = 180.0;
    std::string out;
    bool even = true;
    int bit = 0, value = 0;
    while (static_cast<int>(out.size()) < precision) {
        double& lo = even ? lon_lo : lat_lo;
        double& hi = even ? lon_hi : lat_hi;
        const double v = even ? p.longitude : p.latitude;
        const double mid = (lo + hi) / 2.0;
        value <<= 1;
        if (v >= mid) {
            value |= 1;
            lo = mid;
        } else {
            hi = mid;
        }
        even = !even;
        if (++bit == 5) {
            out.push_back(kAlphabet[static_cast<std::size_t>(value)]);
            bit = 0;
            value = 0;
        }
    }
    return out;
}

}  // namespace telematics
