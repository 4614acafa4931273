#include "telematics/service.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <set>

#include <fmt/format.h>
#include "json.hpp"

#include "telematics/errors.hpp"
#include "telematics/records_io.hpp"

namespace telematics {

using ojson = nlohmann::ordered_json;

namespace {

constexpr std::array<DayOfWeek, 7> kAllDays = {DayOfWeek::mon, DayOfWeek::tue, DayOfWeek::wed, DayOfWeek::thu,
                                               DayOfWeek::fri, DayOfWeek::sat, DayOfWeek::sun};

struct BadRequest {
    std::string message;
};

HttpResponse json_response(int status, const ojson& body) { return {status, body.dump(2) + "\n"}; }

HttpResponse error_response(int status, std::string_view message) {
    ojson body;
    body["error"] = message;
    return json_response(status, body);
}

// MPH values are rounded to 1e-6 so unit round trips do not leak float noise.
double mph_out(double v) {
    const double r = std::round(v * 1e6) / 1e6;
    return r == 0.0 ? 0.0 : r;
}

int hex_value(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

std::string percent_decode(std::string_view s, bool plus_is_space) {
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        const char c = s[i];
        if (c == '%' && i + 2 < s.size()) {
            const int hi = hex_value(s[i + 1]), lo = hex_value(s[i + 2]);
            if (hi >= 0 && lo >= 0) {
                out.push_back(static_cast<char>(hi * 16 + lo));
                i += 2;
                continue;
            }
        }
        out.push_back(plus_is_space && c == '+' ? ' ' : c);
    }
    return out;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

QueryParams parse_query(std::string_view query) {
    QueryParams q;
    if (query.empty()) return q;
    for (auto part : split(query, '&')) {
        if (part.empty()) continue;
        const auto eq = part.find('=');
        auto key = percent_decode(part.substr(0, eq), true);
        auto value = eq == std::string_view::npos ? std::string() : percent_decode(part.substr(eq + 1), true);
        q[std::move(key)] = std::move(value);
    }
    return q;
}

std::optional<std::string_view> param(const QueryParams& q, std::string_view key) {
    const auto it = q.find(key);
    if (it == q.end()) return std::nullopt;
    return std::string_view(it->second);
}

bool parse_int(std::string_view s, int& out) {
    const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
    return !s.empty() && r.ec == std::errc{} && r.ptr == s.data() + s.size();
}

// Comma list of mon..sun; absent or empty selects every day.
std::set<DayOfWeek> parse_days(const QueryParams& q) {
    std::set<DayOfWeek> out;
    const auto raw = param(q, "days");
    if (!raw || raw->empty()) return {kAllDays.begin(), kAllDays.end()};
    for (auto item : split(*raw, ',')) {
        const auto d = parse_day_of_week(item);
        if (!d) throw BadRequest{fmt::format("invalid day '{}'", item)};
        out.insert(*d);
    }
    return out;
}

// Comma list of hours or inclusive ranges "a-b"; absent or empty selects every hour.
std::set<int> parse_hours(const QueryParams& q) {
    std::set<int> out;
    const auto raw = param(q, "hours");
    if (!raw || raw->empty()) {
        for (int h = 0; h < 24; ++h) out.insert(h);
        return out;
    }
    for (auto item : split(*raw, ',')) {
        const auto dash = item.find('-');
        int lo = 0, hi = 0;
        const bool ok = dash == std::string_view::npos
                            ? (parse_int(item, lo) && (hi = lo, true))
                            : (parse_int(item.substr(0, dash), lo) && parse_int(item.substr(dash + 1), hi));
        if (!ok || lo < 0 || hi > 23 || lo > hi) throw BadRequest{fmt::format("invalid hour '{}'", item)};
        for (int h = lo; h <= hi; ++h) out.insert(h);
    }
    return out;
}

bool parse_bool(std::string_view key, std::optional<std::string_view> raw, bool fallback) {
    if (!raw || raw->empty()) return fallback;
    if (*raw == "true" || *raw == "1") return true;
    if (*raw == "false" || *raw == "0") return false;
    throw BadRequest{fmt::format("invalid {} '{}'", key, *raw)};
}

ojson filters_json(const std::set<DayOfWeek>& days, const std::set<int>& hours) {
    ojson f;
    f["days"] = ojson::array();
    for (auto d : days) f["days"].push_back(to_string(d));
    f["hours"] = ojson::array();
    for (int h : hours) f["hours"].push_back(h);
    return f;
}

void put_lrs(ojson& j, const LrsAttributes& lrs) {
    j["route_name"] = lrs.route_name;
    j["direction"] = lrs.direction;
    j["mile_start"] = lrs.mile_start;
    j["mile_end"] = lrs.mile_end;
}

std::optional<double> limit_mph(const RoadSegment* seg) {
    if (!seg || !seg->speed_limit_mps) return std::nullopt;
    return mph_out(mps_to_mph(*seg->speed_limit_mps));
}

ojson nullable(const std::optional<double>& v) { return v ? ojson(mph_out(*v)) : ojson(nullptr); }

// Tenths of a percent by largest remainder, so the column sums to exactly 100.
std::vector<double> percent_column(std::span<const std::uint64_t> counts) {
    std::uint64_t total = 0;
    for (auto c : counts) total += c;
    std::vector<double> out(counts.size(), 0.0);
    if (total == 0) return out;
    std::vector<std::uint64_t> tenths(counts.size());
    std::vector<std::size_t> order(counts.size());
    std::uint64_t assigned = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        tenths[i] = counts[i] * 1000 / total;
        assigned += tenths[i];
        order[i] = i;
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return counts[a] * 1000 % total > counts[b] * 1000 % total;
    });
    for (std::size_t k = 0; assigned < 1000; ++k, ++assigned) ++tenths[order[k]];
    for (std::size_t i = 0; i < counts.size(); ++i) out[i] = static_cast<double>(tenths[i]) / 10.0;
    return out;
}

}  // namespace

ServiceStores load_service_stores(const std::filesystem::path& store_dir, const std::filesystem::path& network,
                                  const std::optional<std::filesystem::path>& lrs) {
    auto hist = parse_histogram_store(read_file(store_dir / kHistogramStoreFile));
    auto od = parse_od_store(read_file(store_dir / kOdStoreFile));
    auto trips = parse_trip_store(read_file(store_dir / kTripStoreFile));
    if (!(od.header == hist.header) || !(trips.header == hist.header)) {
        throw DataError(fmt::format("stores in {} were built from different corpora or settings", store_dir.string()));
    }
    RoadGraph graph = load_network(network);
    if (lrs) graph = conflate_lrs(std::move(graph), load_lrs(*lrs)).graph;
    return {std::move(hist.header), std::move(hist.data), std::move(od.data), std::move(trips.data), std::move(graph)};
}

QueryService::QueryService(ServiceStores stores) : stores_(std::move(stores)) {
    const auto& segs = stores_.graph.segments();
    for (std::size_t i = 0; i < segs.size(); ++i) {
        if (segs[i].lrs) routes_[segs[i].lrs->route_name].push_back({i, &*segs[i].lrs});
    }
    for (auto& [name, entries] : routes_) {
        std::sort(entries.begin(), entries.end(), [](const RouteEntry& a, const RouteEntry& b) {
            if (a.lrs->mile_start != b.lrs->mile_start) return a.lrs->mile_start < b.lrs->mile_start;
            return a.lrs->way_id < b.lrs->way_id;
        });
    }
    const int tz = stores_.header.tz_offset_minutes;
    for (const auto& t : stores_.trips) {
        if (t.start_zip) ++heat_[{false, t.start_hour_local, is_weekend(t.start_day_of_week)}][*t.start_zip];
        if (t.end_zip) {
            const LocalTime end = to_local(t.end_time_ms, tz);
            ++heat_[{true, end.hour, is_weekend(end.day_of_week)}][*t.end_zip];
        }
    }
}

HttpResponse QueryService::handle(std::string_view method, std::string_view target) const {
    if (method != "GET") return error_response(405, "only GET is supported");
    const auto qmark = target.find('?');
    const auto raw_path = target.substr(0, qmark);
    const auto query = qmark == std::string_view::npos ? QueryParams{} : parse_query(target.substr(qmark + 1));

    std::vector<std::string> parts;
    for (auto p : split(raw_path, '/')) {
        if (!p.empty()) parts.push_back(percent_decode(p, false));
    }
    try {
        if (parts.size() == 3 && parts[0] == "segments" && parts[2] == "speed-distribution") {
            return speed_distribution(parts[1], query);
        }
        if (parts.size() == 1 && parts[0] == "routes") return route_list();
        if (parts.size() == 3 && parts[0] == "routes" && parts[2] == "overview") return route_overview(parts[1], query);
        if (parts.size() == 3 && parts[0] == "routes" && parts[2] == "segments") return route_segments(parts[1]);
        if (parts.size() == 1 && parts[0] == "od") return od(query);
        if (parts.size() == 1 && parts[0] == "heatmap") return heatmap(query);
    } catch (const BadRequest& e) {
        return error_response(400, e.message);
    }
    return error_response(404, fmt::format("no such resource '{}'", raw_path));
}

HttpResponse QueryService::speed_distribution(std::string_view way_id, const QueryParams& q) const {
    const auto days = parse_days(q);
    const auto hours = parse_hours(q);
    const RoadSegment* seg = stores_.graph.segment(way_id);
    const auto& cells = stores_.histograms.cells();
    auto it = cells.lower_bound({std::string(way_id), "", 0});
    if (!seg && (it == cells.end() || it->first.way_id != way_id)) {
        return error_response(404, fmt::format("unknown way_id '{}'", way_id));
    }

    SpeedBins bins;
    std::array<std::array<std::uint64_t, 24>, 7> grid{};
    std::uint64_t total = 0;
    for (; it != cells.end() && it->first.way_id == way_id; ++it) {
        const auto date = parse_date(it->first.date);
        if (!date) continue;
        const DayOfWeek d = day_of_week(*date);
        if (!days.contains(d) || !hours.contains(it->first.hour)) continue;
        for (const auto& [bin, count] : it->second) {
            bins[bin] += count;
            grid[static_cast<std::size_t>(d)][static_cast<std::size_t>(it->first.hour)] += count;
            total += count;
        }
    }

    const double width = stores_.histograms.bin_width_mph();
    ojson body;
    body["way_id"] = way_id;
    if (seg) {
        body["road_class"] = to_string(seg->road_class);
        if (seg->lrs) put_lrs(body, *seg->lrs);
    }
    body["filters"] = filters_json(days, hours);
    body["bin_width_mph"] = width;
    body["total_traversals"] = total;
    body["bins"] = ojson::array();
    for (const auto& [bin, count] : bins) {
        ojson b;
        b["lower_mph"] = mph_out(static_cast<double>(bin) * width);
        b["upper_mph"] = mph_out(static_cast<double>(bin + 1) * width);
        b["count"] = count;
        body["bins"].push_back(std::move(b));
    }

    const auto pct = speed_percentiles(bins, width, kServedPercentiles);
    ojson metrics;
    const std::array<const char*, 5> names = {"p25", "p50", "p75", "p85", "p95"};
    for (std::size_t i = 0; i < names.size(); ++i) metrics[names[i]] = pct ? ojson(mph_out((*pct)[i])) : ojson(nullptr);
    if (const auto limit = limit_mph(seg)) {
        metrics["speed_limit_mph"] = *limit;
        metrics["median_minus_limit"] = pct ? ojson(mph_out((*pct)[1] - *limit)) : ojson(nullptr);
        metrics["p95_minus_limit"] = pct ? ojson(mph_out((*pct)[4] - *limit)) : ojson(nullptr);
    }
    body["metrics"] = std::move(metrics);

    ojson g;
    g["days"] = ojson::array();
    for (auto d : kAllDays) g["days"].push_back(to_string(d));
    g["counts"] = ojson::array();
    for (const auto& row : grid) g["counts"].push_back(row);
    body["traversal_grid"] = std::move(g);
    return json_response(200, body);
}

HttpResponse QueryService::route_overview(std::string_view route, const QueryParams& q) const {
    const auto metric = param(q, "metric").value_or("median");
    const bool median = metric == "median" || metric == "median_minus_limit";
    const bool minus_limit = metric == "median_minus_limit" || metric == "p95_minus_limit";
    if (!median && metric != "p95" && metric != "p95_minus_limit") {
        return error_response(400, fmt::format("unknown metric '{}'", metric));
    }
    const auto rit = routes_.find(route);
    if (rit == routes_.end()) return error_response(404, fmt::format("unknown route '{}'", route));

    const double width = stores_.histograms.bin_width_mph();
    const std::array<double, 1> p = {median ? 50.0 : 95.0};
    ojson body;
    body["route_name"] = route;
    body["metric"] = metric;
    body["segments"] = ojson::array();
    for (const auto& e : rit->second) {
        const RoadSegment& seg = stores_.graph.segments()[e.segment];
        SpeedBins bins;
        const auto& cells = stores_.histograms.cells();
        for (auto it = cells.lower_bound({seg.way_id, "", 0}); it != cells.end() && it->first.way_id == seg.way_id; ++it) {
            for (const auto& [bin, count] : it->second) bins[bin] += count;
        }
        std::optional<double> value;
        if (const auto v = speed_percentiles(bins, width, p)) {
            value = v->front();
            if (minus_limit) {
                const auto limit = limit_mph(&seg);
                value = limit ? std::optional<double>(*value - *limit) : std::nullopt;
            }
        }
        ojson row;
        row["way_id"] = seg.way_id;
        row["direction"] = e.lrs->direction;
        row["mile_start"] = e.lrs->mile_start;
        row["mile_end"] = e.lrs->mile_end;
        row["metric_value"] = nullable(value);
        body["segments"].push_back(std::move(row));
    }
    return json_response(200, body);
}

HttpResponse QueryService::route_list() const {
    ojson body;
    body["routes"] = ojson::array();
    for (const auto& [name, entries] : routes_) {
        double lo = entries.front().lrs->mile_start, hi = entries.front().lrs->mile_end;
        for (const auto& e : entries) {
            lo = std::min({lo, e.lrs->mile_start, e.lrs->mile_end});
            hi = std::max({hi, e.lrs->mile_start, e.lrs->mile_end});
        }
        ojson r;
        r["route_name"] = name;
        r["segment_count"] = entries.size();
        r["mile_min"] = lo;
        r["mile_max"] = hi;
        body["routes"].push_back(std::move(r));
    }
    return json_response(200, body);
}

HttpResponse QueryService::route_segments(std::string_view route) const {
    const auto rit = routes_.find(route);
    if (rit == routes_.end()) return error_response(404, fmt::format("unknown route '{}'", route));
    ojson body;
    body["route_name"] = route;
    body["segments"] = ojson::array();
    for (const auto& e : rit->second) {
        const RoadSegment& seg = stores_.graph.segments()[e.segment];
        ojson s;
        s["way_id"] = seg.way_id;
        s["direction"] = e.lrs->direction;
        s["mile_start"] = e.lrs->mile_start;
        s["mile_end"] = e.lrs->mile_end;
        s["road_class"] = to_string(seg.road_class);
        s["speed_limit_mph"] = nullable(limit_mph(&seg));
        s["coordinates"] = ojson::array();
        for (const auto& pt : seg.polyline) s["coordinates"].push_back({pt.latitude, pt.longitude});
        body["segments"].push_back(std::move(s));
    }
    return json_response(200, body);
}

HttpResponse QueryService::od(const QueryParams& q) const {
    const auto zip = param(q, "zip");
    if (!zip || zip->empty()) throw BadRequest{"zip is required"};
    const auto direction = param(q, "direction").value_or("origin");
    if (direction != "origin" && direction != "destination") {
        throw BadRequest{fmt::format("invalid direction '{}'", direction)};
    }
    const bool as_origin = direction == "origin";
    const bool include_intra = parse_bool("include_intra", param(q, "include_intra"), false);
    const auto days = parse_days(q);
    const auto hours = parse_hours(q);

    std::map<std::string, std::uint64_t> grouped;
    for (const auto& [key, count] : stores_.od.cells) {
        const auto& mine = as_origin ? key.origin_zip : key.dest_zip;
        const auto& other = as_origin ? key.dest_zip : key.origin_zip;
        if (mine != *zip) continue;
        if (!include_intra && other == *zip) continue;
        if (!days.contains(key.day_of_week) || !hours.contains(key.start_hour_local)) continue;
        grouped[other] += count;
    }
    std::vector<std::pair<std::string, std::uint64_t>> rows(grouped.begin(), grouped.end());
    std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::uint64_t> counts;
    std::uint64_t total = 0;
    for (const auto& r : rows) {
        counts.push_back(r.second);
        total += r.second;
    }
    const auto percents = percent_column(counts);

    ojson body;
    body["selected_zip"] = *zip;
    body["direction"] = direction;
    body["include_intra"] = include_intra;
    body["filters"] = filters_json(days, hours);
    body["total"] = total;
    body["rows"] = ojson::array();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        ojson r;
        r["zip"] = rows[i].first;
        r["trips"] = rows[i].second;
        r["percent"] = percents[i];
        body["rows"].push_back(std::move(r));
    }
    return json_response(200, body);
}

HttpResponse QueryService::heatmap(const QueryParams& q) const {
    int hour = 0;
    const auto raw_hour = param(q, "hour");
    if (!raw_hour || !parse_int(*raw_hour, hour) || hour < 0 || hour > 23) {
        throw BadRequest{"hour must be an integer in 0-23"};
    }
    const auto dayclass = param(q, "dayclass").value_or("weekday");
    if (dayclass != "weekday" && dayclass != "weekend") throw BadRequest{fmt::format("invalid dayclass '{}'", dayclass)};
    const auto endpoint = param(q, "endpoint").value_or("start");
    if (endpoint != "start" && endpoint != "end") throw BadRequest{fmt::format("invalid endpoint '{}'", endpoint)};

    ojson body;
    body["hour"] = hour;
    body["dayclass"] = dayclass;
    body["endpoint"] = endpoint;
    body["rows"] = ojson::array();
    std::uint64_t total = 0;
    const auto it = heat_.find({endpoint == "end", hour, dayclass == "weekend"});
    if (it != heat_.end()) {
        for (const auto& [zip, trips] : it->second) {
            ojson r;
            r["zip"] = zip;
            r["trips"] = trips;
            body["rows"].push_back(std::move(r));
            total += trips;
        }
    }
    body["total"] = total;
    return json_response(200, body);
}

}  // namespace telematics
