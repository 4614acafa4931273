#include "telematics/records_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>
#include "json.hpp"

#include "record_json.hpp"
#include "telematics/errors.hpp"

namespace telematics {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::optional<std::string> optional_string(const json& obj, const char* key) {
    const auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) return std::nullopt;
    if (!it->is_string()) return std::nullopt;
    return it->get<std::string>();
}

bool read_number(const json& obj, const char* key, double& out) {
    const auto it = obj.find(key);
    if (it == obj.end() || !it->is_number()) return false;
    out = it->get<double>();
    return true;
}

std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
    while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
    return s;
}

template <typename T>
bool parse_num(std::string_view s, T& out) {
    const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc{} && res.ptr == s.data() + s.size();
}

ShardContents read_csv_shard(std::istream& in, SpeedUnit unit) {
    ShardContents out;
    std::string line;
    if (!std::getline(in, line)) return out;
    std::map<std::string, std::size_t, std::less<>> col;
    {
        const auto names = split_csv(trim(line));
        for (std::size_t i = 0; i < names.size(); ++i) col.emplace(std::string(trim(names[i])), i);
    }
    for (const char* required : {"journey_id", "timestamp", "latitude", "longitude", "speed"}) {
        if (!col.contains(required)) throw DataError(fmt::format("CSV shard header lacks column '{}'", required));
    }
    auto cell = [&](const std::vector<std::string_view>& cells, std::string_view name) -> std::string_view {
        const auto it = col.find(name);
        if (it == col.end() || it->second >= cells.size()) return {};
        return trim(cells[it->second]);
    };
    auto opt_cell = [&](const std::vector<std::string_view>& cells, std::string_view name) -> std::optional<std::string> {
        const auto v = cell(cells, name);
        if (v.empty()) return std::nullopt;
        return std::string(v);
    };

    while (std::getline(in, line)) {
        const auto text = trim(line);
        if (text.empty()) continue;
        const auto cells = split_csv(text);
        if (cells.size() != col.size()) {
            ++out.malformed;
            continue;
        }
        RawPointRecord r;
        r.journey_id = std::string(cell(cells, "journey_id"));
        double speed = 0.0;
        bool ok = !r.journey_id.empty() && parse_num(cell(cells, "timestamp"), r.timestamp_ms) &&
                  parse_num(cell(cells, "latitude"), r.latitude) && parse_num(cell(cells, "longitude"), r.longitude) &&
                  parse_num(cell(cells, "speed"), speed);
        if (ok) {
            if (const auto h = cell(cells, "heading"); !h.empty()) {
                double heading = 0.0;
                ok = parse_num(h, heading);
                r.heading = heading;
            }
        }
        if (ok) {
            const auto ig = parse_ignition(cell(cells, "ignition"));
            ok = ig.has_value();
            if (ig) r.ignition = *ig;
        }
        if (!ok) {
            ++out.malformed;
            continue;
        }
        r.speed_mps = to_mps(speed, unit);
        r.geohash = opt_cell(cells, "geohash");
        r.postal_code = opt_cell(cells, "postal_code");
        r.country_code = opt_cell(cells, "country_code");
        out.records.push_back(std::move(r));
    }
    return out;
}

std::string format_number(double v) { return fmt::format("{}", v); }

}  // namespace

namespace detail {

std::optional<RawPointRecord> record_from_json(const json& obj, SpeedUnit unit) {
    RawPointRecord r;
    const auto jid = obj.find("journey_id");
    if (jid == obj.end()) return std::nullopt;
    if (jid->is_string()) {
        r.journey_id = jid->get<std::string>();
    } else if (jid->is_number_integer()) {
        r.journey_id = std::to_string(jid->get<std::int64_t>());
    } else {
        return std::nullopt;
    }
    if (r.journey_id.empty()) return std::nullopt;

    const auto ts = obj.find("timestamp");
    if (ts == obj.end() || !ts->is_number()) return std::nullopt;
    if (ts->is_number_float()) {
        const double v = ts->get<double>();
        if (!std::isfinite(v) || v != std::floor(v)) return std::nullopt;
        r.timestamp_ms = static_cast<std::int64_t>(v);
    } else {
        r.timestamp_ms = ts->get<std::int64_t>();
    }

    double speed = 0.0;
    if (!read_number(obj, "latitude", r.latitude) || !read_number(obj, "longitude", r.longitude) ||
        !read_number(obj, "speed", speed)) {
        return std::nullopt;
    }
    r.speed_mps = to_mps(speed, unit);

    if (const auto h = obj.find("heading"); h != obj.end() && !h->is_null()) {
        if (!h->is_number()) return std::nullopt;
        r.heading = h->get<double>();
    }
    if (const auto ig = obj.find("ignition"); ig != obj.end() && !ig->is_null()) {
        if (!ig->is_string()) return std::nullopt;
        const auto parsed = parse_ignition(ig->get_ref<const std::string&>());
        if (!parsed) return std::nullopt;
        r.ignition = *parsed;
    }

    const auto meta = obj.find("metadata");
    const json& m = (meta != obj.end() && meta->is_object()) ? *meta : obj;
    r.geohash = optional_string(m, "geohash");
    r.postal_code = optional_string(m, "postal_code");
    r.country_code = optional_string(m, "country_code");
    return r;
}

}  // namespace detail

ShardManifest scan_shard_dir(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw MissingArtifactError(fmt::format("shard directory '{}' does not exist", dir.string()));
    ShardManifest out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const auto ext = entry.path().extension();
        if (ext == ".ndjson" || ext == ".jsonl" || ext == ".csv") {
            out.push_back({entry.path().stem().string(), entry.path()});
        }
    }
    std::sort(out.begin(), out.end(), [](const ShardRef& a, const ShardRef& b) { return a.path.filename() < b.path.filename(); });
    return out;
}

std::optional<RawPointRecord> parse_record_line(std::string_view line, SpeedUnit unit, bool& malformed) {
    malformed = false;
    if (trim(line).empty()) return std::nullopt;
    const json obj = json::parse(line, nullptr, false);
    if (obj.is_discarded() || !obj.is_object()) {
        malformed = true;
        return std::nullopt;
    }
    if (obj.contains("header") || (obj.contains("file_id") && !obj.contains("journey_id"))) return std::nullopt;
    auto rec = detail::record_from_json(obj, unit);
    if (!rec) malformed = true;
    return rec;
}

ShardContents read_shard(const ShardRef& shard, SpeedUnit default_unit) {
    std::ifstream in(shard.path);
    if (!in) throw DataError(fmt::format("shard '{}' is unreadable ({})", shard.shard_id, shard.path.string()));
    if (shard.path.extension() == ".csv") return read_csv_shard(in, default_unit);

    ShardContents out;
    SpeedUnit unit = default_unit;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (first) {
            first = false;
            const json obj = json::parse(line, nullptr, false);
            if (!obj.is_discarded() && obj.is_object()) {
                if (const auto h = obj.find("header"); h != obj.end() && h->is_object()) {
                    if (const auto u = h->find("speed_unit"); u != h->end()) {
                        const auto parsed = u->is_string() ? parse_speed_unit(u->get_ref<const std::string&>()) : std::nullopt;
                        if (!parsed) throw DataError(fmt::format("shard '{}' declares an unknown speed_unit", shard.shard_id));
                        unit = *parsed;
                    }
                    continue;
                }
                if (obj.contains("file_id") && !obj.contains("journey_id")) {
                    unit = SpeedUnit::mps;  // packed files are canonical
                    continue;
                }
            }
        }
        bool malformed = false;
        auto rec = parse_record_line(line, unit, malformed);
        if (rec) {
            out.records.push_back(std::move(*rec));
        } else if (malformed) {
            ++out.malformed;
        }
    }
    if (in.bad()) throw DataError(fmt::format("shard '{}' could not be read completely", shard.shard_id));
    return out;
}

std::string json_quote(std::string_view s) { return json(s).dump(); }

std::string format_record(const RawPointRecord& r) {
    std::string out;
    out.reserve(192);
    out += "{\"journey_id\":";
    out += json_quote(r.journey_id);
    out += ",\"timestamp\":";
    out += std::to_string(r.timestamp_ms);
    out += ",\"latitude\":";
    out += format_number(r.latitude);
    out += ",\"longitude\":";
    out += format_number(r.longitude);
    out += ",\"heading\":";
    out += r.heading ? format_number(*r.heading) : std::string("null");
    out += ",\"speed\":";
    out += format_number(r.speed_mps);
    out += ",\"ignition\":\"";
    out += to_string(r.ignition);
    out += '"';
    auto opt = [&](const char* key, const std::optional<std::string>& v) {
        out += ",\"";
        out += key;
        out += "\":";
        out += v ? json_quote(*v) : std::string("null");
    };
    opt("geohash", r.geohash);
    opt("postal_code", r.postal_code);
    opt("country_code", r.country_code);
    out += '}';
    return out;
}

std::string format_packed_header(const PackedHeader& h) {
    return fmt::format("{{\"file_id\":{},\"journey_count\":{},\"point_count\":{}}}", json_quote(h.file_id),
                       h.journey_count, h.point_count);
}

PackedFile read_packed_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError(fmt::format("packed file '{}' is unreadable", path.string()));
    PackedFile out;
    std::string line;
    if (!std::getline(in, line)) throw DataError(fmt::format("packed file '{}' is empty", path.string()));
    const json head = json::parse(line, nullptr, false);
    if (head.is_discarded() || !head.is_object() || !head.contains("file_id") || !head.contains("journey_count") ||
        !head.contains("point_count")) {
        throw DataError(fmt::format("packed file '{}' has no header line", path.string()));
    }
    out.header.file_id = head["file_id"].get<std::string>();
    out.header.journey_count = head["journey_count"].get<std::size_t>();
    out.header.point_count = head["point_count"].get<std::size_t>();
    out.records.reserve(out.header.point_count);
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        bool malformed = false;
        auto rec = parse_record_line(line, SpeedUnit::mps, malformed);
        if (malformed) throw DataError(fmt::format("packed file '{}' line {} is malformed", path.string(), line_no));
        if (rec) out.records.push_back(std::move(*rec));
    }
    if (out.records.size() != out.header.point_count) {
        throw DataError(fmt::format("packed file '{}' holds {} points, header says {}", path.string(),
                                    out.records.size(), out.header.point_count));
    }
    return out;
}

fs::path done_marker(const fs::path& file) {
    fs::path marker = file;
    marker += ".done";
    return marker;
}

bool has_done_marker(const fs::path& file) { return fs::exists(done_marker(file)); }

void write_done_marker(const fs::path& file) { write_file_atomic(done_marker(file), ""); }

void write_file_atomic(const fs::path& path, std::string_view contents) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError(fmt::format("cannot write '{}'", tmp.string()));
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        out.flush();
        if (!out) throw DataError(fmt::format("write to '{}' failed", tmp.string()));
    }
    fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifactError(fmt::format("cannot open '{}'", path.string()));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace telematics
