#include "telematics/store_io.hpp"

#include <charconv>
#include <cstdint>
#include <map>

#include <fmt/format.h>
#include "json.hpp"

#include "telematics/errors.hpp"

namespace telematics {

using nlohmann::json;

std::string fnv1a_hex(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return fmt::format("{:016x}", h);
}

namespace {

constexpr std::string_view kTripColumns =
    "journey_id,start_time_ms,end_time_ms,start_lat,start_lon,end_lat,end_lon,start_zip,end_zip,"
    "duration_s,path_length_m,straight_line_m,point_count,start_hour_local,start_day_of_week";
constexpr std::string_view kTraversalColumns =
    "journey_id,way_id,run_index,mean_speed_mps,min_speed_mps,max_speed_mps,stddev_speed_mps,"
    "dwell_time_s,point_count,date_local,hour_local,day_of_week";

std::string csv_header(std::string_view store, const StoreHeader& h, std::string_view columns) {
    return fmt::format("# store={}\n# bin_width_mph={}\n# tz_offset={}\n# corpus_digest={}\n{}\n", store, h.bin_width_mph,
                       format_tz_offset(h.tz_offset_minutes), h.corpus_digest, columns);
}

json header_json(std::string_view store, const StoreHeader& h) {
    return {{"store", store},
            {"bin_width_mph", h.bin_width_mph},
            {"tz_offset", format_tz_offset(h.tz_offset_minutes)},
            {"corpus_digest", h.corpus_digest}};
}

StoreHeader header_from_json(const json& j) {
    StoreHeader h;
    h.bin_width_mph = j.at("bin_width_mph").get<double>();
    const auto tz = parse_tz_offset(j.at("tz_offset").get<std::string>());
    if (!tz) throw DataError("store header has an invalid tz_offset");
    h.tz_offset_minutes = *tz;
    h.corpus_digest = j.at("corpus_digest").get<std::string>();
    return h;
}

class CsvReader {
public:
    explicit CsvReader(std::string_view text) : text_(text) {}

    // Consumes "# key=value" lines and the column row.
    StoreHeader read_header(std::string_view expected_columns) {
        StoreHeader h;
        std::string_view line;
        while (next_line(line)) {
            if (line.starts_with("# ")) {
                const auto body = line.substr(2);
                const auto eq = body.find('=');
                if (eq == std::string_view::npos) continue;
                const auto key = body.substr(0, eq);
                const auto value = body.substr(eq + 1);
                if (key == "bin_width_mph") {
                    if (!number(value, h.bin_width_mph)) throw DataError("store header has an invalid bin_width_mph");
                } else if (key == "tz_offset") {
                    const auto tz = parse_tz_offset(value);
                    if (!tz) throw DataError("store header has an invalid tz_offset");
                    h.tz_offset_minutes = *tz;
                } else if (key == "corpus_digest") {
                    h.corpus_digest = std::string(value);
                }
                continue;
            }
            if (line != expected_columns) throw DataError(fmt::format("unexpected store columns '{}'", line));
            return h;
        }
        throw DataError("store has no column row");
    }

    bool next_row(std::vector<std::string_view>& cells) {
        std::string_view line;
        while (next_line(line)) {
            if (line.empty()) continue;
            cells.clear();
            std::size_t start = 0;
            while (true) {
                const auto comma = line.find(',', start);
                cells.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
                if (comma == std::string_view::npos) break;
                start = comma + 1;
            }
            ++row_;
            return true;
        }
        return false;
    }

    std::size_t row() const noexcept { return row_; }

    template <typename T>
    static bool number(std::string_view s, T& out) {
        const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
        return r.ec == std::errc{} && r.ptr == s.data() + s.size();
    }

private:
    bool next_line(std::string_view& line) {
        if (pos_ >= text_.size()) return false;
        auto end = text_.find('\n', pos_);
        if (end == std::string_view::npos) end = text_.size();
        line = text_.substr(pos_, end - pos_);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        pos_ = end + 1;
        return true;
    }

    std::string_view text_;
    std::size_t pos_ = 0;
    std::size_t row_ = 0;
};

std::optional<std::string> optional_cell(std::string_view s) {
    if (s.empty()) return std::nullopt;
    return std::string(s);
}

}  // namespace

std::string format_trip_store(const StoreHeader& header, std::span<const TripSummary> rows) {
    std::string out = csv_header("trip_summaries", header, kTripColumns);
    for (const auto& t : rows) {
        out += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", t.journey_id, t.start_time_ms, t.end_time_ms,
                           t.start_point.latitude, t.start_point.longitude, t.end_point.latitude, t.end_point.longitude,
                           t.start_zip.value_or(""), t.end_zip.value_or(""), t.duration_s, t.path_length_m,
                           t.straight_line_m, t.point_count, t.start_hour_local, to_string(t.start_day_of_week));
    }
    return out;
}

std::string format_traversal_store(const StoreHeader& header, std::span<const TraversalSummary> rows) {
    std::string out = csv_header("traversal_summaries", header, kTraversalColumns);
    for (const auto& t : rows) {
        out += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{}\n", t.journey_id, t.way_id, t.run_index, t.speed.mean,
                           t.speed.min, t.speed.max, t.speed.stddev, t.dwell_time_s, t.point_count,
                           format_date(t.date_local), t.hour_local, to_string(t.day_of_week));
    }
    return out;
}

std::string format_histogram_store(const StoreHeader& header, const WaySpeedHistogram& store) {
    json entries = json::array();
    for (const auto& [key, bins] : store.cells()) {
        json jb = json::array();
        for (const auto& [bin, count] : bins) jb.push_back(json::array({bin, count}));
        entries.push_back({{"way_id", key.way_id}, {"date", key.date}, {"hour", key.hour}, {"bins", std::move(jb)}});
    }
    json doc = {{"header", header_json("way_histograms", header)}, {"entries", std::move(entries)}};
    doc["header"]["bin_width_mph"] = store.bin_width_mph();
    return doc.dump(1) + "\n";
}

std::string format_od_store(const StoreHeader& header, const OdMatrix& store) {
    json cells = json::array();
    for (const auto& [key, count] : store.cells) {
        cells.push_back({{"origin_zip", key.origin_zip},
                         {"dest_zip", key.dest_zip},
                         {"start_hour_local", key.start_hour_local},
                         {"day_of_week", to_string(key.day_of_week)},
                         {"trips", count}});
    }
    json doc = {{"header", header_json("od_matrix", header)},
                {"excluded_missing_zip", store.excluded_missing_zip},
                {"cells", std::move(cells)}};
    return doc.dump(1) + "\n";
}

LoadedStore<std::vector<TripSummary>> parse_trip_store(std::string_view text) {
    CsvReader reader(text);
    LoadedStore<std::vector<TripSummary>> out;
    out.header = reader.read_header(kTripColumns);
    std::vector<std::string_view> c;
    while (reader.next_row(c)) {
        TripSummary t;
        bool ok = c.size() == 15;
        if (ok) {
            t.journey_id = std::string(c[0]);
            t.start_zip = optional_cell(c[7]);
            t.end_zip = optional_cell(c[8]);
            const auto day = parse_day_of_week(c[14]);
            ok = CsvReader::number(c[1], t.start_time_ms) && CsvReader::number(c[2], t.end_time_ms) &&
                 CsvReader::number(c[3], t.start_point.latitude) && CsvReader::number(c[4], t.start_point.longitude) &&
                 CsvReader::number(c[5], t.end_point.latitude) && CsvReader::number(c[6], t.end_point.longitude) &&
                 CsvReader::number(c[9], t.duration_s) && CsvReader::number(c[10], t.path_length_m) &&
                 CsvReader::number(c[11], t.straight_line_m) && CsvReader::number(c[12], t.point_count) &&
                 CsvReader::number(c[13], t.start_hour_local) && day.has_value();
            if (day) t.start_day_of_week = *day;
        }
        if (!ok) throw DataError(fmt::format("trip store row {} is malformed", reader.row()));
        out.data.push_back(std::move(t));
    }
    return out;
}

LoadedStore<std::vector<TraversalSummary>> parse_traversal_store(std::string_view text) {
    CsvReader reader(text);
    LoadedStore<std::vector<TraversalSummary>> out;
    out.header = reader.read_header(kTraversalColumns);
    std::vector<std::string_view> c;
    while (reader.next_row(c)) {
        TraversalSummary t;
        bool ok = c.size() == 12;
        if (ok) {
            t.journey_id = std::string(c[0]);
            t.way_id = std::string(c[1]);
            const auto date = parse_date(c[9]);
            const auto day = parse_day_of_week(c[11]);
            ok = CsvReader::number(c[2], t.run_index) && CsvReader::number(c[3], t.speed.mean) &&
                 CsvReader::number(c[4], t.speed.min) && CsvReader::number(c[5], t.speed.max) &&
                 CsvReader::number(c[6], t.speed.stddev) && CsvReader::number(c[7], t.dwell_time_s) &&
                 CsvReader::number(c[8], t.point_count) && CsvReader::number(c[10], t.hour_local) && date && day;
            if (date) t.date_local = *date;
            if (day) t.day_of_week = *day;
        }
        if (!ok) throw DataError(fmt::format("traversal store row {} is malformed", reader.row()));
        out.data.push_back(std::move(t));
    }
    return out;
}

LoadedStore<WaySpeedHistogram> parse_histogram_store(std::string_view text) {
    const json doc = json::parse(text, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) throw DataError("histogram store is not valid JSON");
    try {
        StoreHeader header = header_from_json(doc.at("header"));
        WaySpeedHistogram store(header.bin_width_mph);
        for (const auto& e : doc.at("entries")) {
            HistogramKey key{e.at("way_id").get<std::string>(), e.at("date").get<std::string>(), e.at("hour").get<int>()};
            for (const auto& b : e.at("bins")) store.add_count(key, b.at(0).get<std::int64_t>(), b.at(1).get<std::uint64_t>());
        }
        return {std::move(header), std::move(store)};
    } catch (const json::exception& e) {
        throw DataError(fmt::format("histogram store is malformed: {}", e.what()));
    }
}

LoadedStore<OdMatrix> parse_od_store(std::string_view text) {
    const json doc = json::parse(text, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) throw DataError("OD store is not valid JSON");
    try {
        LoadedStore<OdMatrix> out;
        out.header = header_from_json(doc.at("header"));
        out.data.excluded_missing_zip = doc.at("excluded_missing_zip").get<std::uint64_t>();
        for (const auto& c : doc.at("cells")) {
            const auto day = parse_day_of_week(c.at("day_of_week").get<std::string>());
            if (!day) throw DataError("OD store cell has an invalid day_of_week");
            out.data.cells[{c.at("origin_zip").get<std::string>(), c.at("dest_zip").get<std::string>(),
                            c.at("start_hour_local").get<int>(), *day}] += c.at("trips").get<std::uint64_t>();
        }
        return out;
    } catch (const json::exception& e) {
        throw DataError(fmt::format("OD store is malformed: {}", e.what()));
    }
}

}  // namespace telematics
