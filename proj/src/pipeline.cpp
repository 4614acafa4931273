#include "telematics/pipeline.hpp"

#include <algorithm>
#include <chrono>

#include <fmt/format.h>
#include "json.hpp"

#include "telematics/errors.hpp"
#include "telematics/parallel.hpp"
#include "telematics/records_io.hpp"
#include "telematics/store_io.hpp"

namespace telematics {

namespace fs = std::filesystem;
using nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void write_report(const PipelineConfig& config, const StageReport& report) {
    fs::create_directories(config.reports_dir());
    write_file_atomic(config.reports_dir() / (report.stage + ".json"), to_json(report));
}

// Removes earlier outputs named <prefix>*.ndjson and their markers.
void clear_outputs(const fs::path& dir, std::string_view prefix) {
    if (!fs::is_directory(dir)) return;
    std::vector<fs::path> doomed;
    for (const auto& e : fs::directory_iterator(dir)) {
        const auto name = e.path().filename().string();
        if (e.is_regular_file() && name.starts_with(prefix) &&
            (name.ends_with(".ndjson") || name.ends_with(".ndjson.done") || name.ends_with(".tmp"))) {
            doomed.push_back(e.path());
        }
    }
    for (const auto& p : doomed) fs::remove(p);
}

template <typename T>
void read_field(const json& obj, std::string_view key, T& out) {
    try {
        out = obj.at(std::string(key)).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(fmt::format("config field '{}' has the wrong type", key));
    }
}

void reject_unknown(const json& obj, std::initializer_list<std::string_view> known, std::string_view where) {
    for (const auto& [key, value] : obj.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw ConfigError(fmt::format("unknown config key '{}{}'", where, key));
        }
    }
}

template <typename T>
void maybe(const json& obj, std::string_view key, T& out) {
    if (obj.contains(std::string(key))) read_field(obj, key, out);
}

void maybe_path(const json& obj, std::string_view key, std::optional<fs::path>& out) {
    if (!obj.contains(std::string(key))) return;
    std::string s;
    read_field(obj, key, s);
    out = fs::path(s);
}

void parse_synth(const json& j, SynthConfig& s) {
    reject_unknown(j,
                   {"seed", "grid_rows", "grid_cols", "segment_length_m", "n_trips", "sampling_period_s",
                    "gps_noise_sigma_m", "shard_count", "duplicate_rate", "split_degree", "congested_fraction",
                    "invalid_rate", "postal_code_rate", "region_rows", "region_cols", "origin_lat", "origin_lon",
                    "start_date", "span_days", "journey_prefix", "journey_offset", "min_hour", "max_hour"},
                   "synth.");
    maybe(j, "seed", s.seed);
    maybe(j, "grid_rows", s.grid_rows);
    maybe(j, "grid_cols", s.grid_cols);
    maybe(j, "segment_length_m", s.segment_length_m);
    maybe(j, "n_trips", s.n_trips);
    maybe(j, "sampling_period_s", s.sampling_period_s);
    maybe(j, "gps_noise_sigma_m", s.gps_noise_sigma_m);
    maybe(j, "shard_count", s.shard_count);
    maybe(j, "duplicate_rate", s.duplicate_rate);
    maybe(j, "split_degree", s.split_degree);
    maybe(j, "congested_fraction", s.congested_fraction);
    maybe(j, "invalid_rate", s.invalid_rate);
    maybe(j, "postal_code_rate", s.postal_code_rate);
    maybe(j, "region_rows", s.region_rows);
    maybe(j, "region_cols", s.region_cols);
    maybe(j, "origin_lat", s.origin_lat);
    maybe(j, "origin_lon", s.origin_lon);
    maybe(j, "start_date", s.start_date);
    maybe(j, "span_days", s.span_days);
    maybe(j, "journey_prefix", s.journey_prefix);
    maybe(j, "journey_offset", s.journey_offset);
    maybe(j, "min_hour", s.min_hour);
    maybe(j, "max_hour", s.max_hour);
}

SynthConfig effective_synth(const PipelineConfig& config) {
    SynthConfig s = config.synth;
    s.tz_offset_minutes = config.tz_offset_minutes;
    return s;
}

}  // namespace

void PipelineConfig::validate() const {
    if (out.empty()) throw ConfigError("output root must not be empty");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (!(bin_width_mph > 0.0) || !std::isfinite(bin_width_mph)) throw ConfigError("bin_width_mph must be positive");
    if (tz_offset_minutes < -24 * 60 || tz_offset_minutes > 24 * 60) throw ConfigError("tz offset out of range");
    if (port < 0 || port > 65535) throw ConfigError("port must be in 0-65535");
    match.validate();
}

PipelineConfig config_from_json(std::string_view text, PipelineConfig c) {
    const json j = json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw ConfigError("config is not a JSON object");
    reject_unknown(j,
                   {"out", "paths", "batch_size", "match", "bin_width_mph", "tz_offset", "input_speed_unit", "workers",
                    "write_rejects", "synth", "serve"},
                   "");
    if (j.contains("out")) {
        std::string s;
        read_field(j, "out", s);
        c.out = s;
    }
    if (j.contains("paths")) {
        const auto& p = j["paths"];
        if (!p.is_object()) throw ConfigError("config field 'paths' must be an object");
        reject_unknown(p, {"raw", "network", "lrs", "regions"}, "paths.");
        maybe_path(p, "raw", c.raw_dir);
        maybe_path(p, "network", c.network);
        maybe_path(p, "lrs", c.lrs);
        maybe_path(p, "regions", c.regions);
    }
    maybe(j, "batch_size", c.batch_size);
    if (j.contains("match")) {
        const auto& m = j["match"];
        if (!m.is_object()) throw ConfigError("config field 'match' must be an object");
        reject_unknown(m, {"sigma_gps_m", "beta_m", "candidate_radius_m", "max_time_gap_s", "max_route_ratio"}, "match.");
        maybe(m, "sigma_gps_m", c.match.sigma_gps_m);
        maybe(m, "beta_m", c.match.beta_m);
        maybe(m, "candidate_radius_m", c.match.candidate_radius_m);
        maybe(m, "max_time_gap_s", c.match.max_time_gap_s);
        maybe(m, "max_route_ratio", c.match.max_route_ratio);
    }
    maybe(j, "bin_width_mph", c.bin_width_mph);
    if (j.contains("tz_offset")) {
        std::string s;
        read_field(j, "tz_offset", s);
        const auto tz = parse_tz_offset(s);
        if (!tz) throw ConfigError(fmt::format("tz_offset '{}' is not of the form +HH:MM", s));
        c.tz_offset_minutes = *tz;
    }
    if (j.contains("input_speed_unit")) {
        std::string s;
        read_field(j, "input_speed_unit", s);
        const auto u = parse_speed_unit(s);
        if (!u) throw ConfigError(fmt::format("unknown input_speed_unit '{}'", s));
        c.input_unit = *u;
    }
    maybe(j, "workers", c.workers);
    maybe(j, "write_rejects", c.write_rejects);
    if (j.contains("synth")) {
        if (!j["synth"].is_object()) throw ConfigError("config field 'synth' must be an object");
        parse_synth(j["synth"], c.synth);
    }
    if (j.contains("serve")) {
        const auto& s = j["serve"];
        if (!s.is_object()) throw ConfigError("config field 'serve' must be an object");
        reject_unknown(s, {"host", "port"}, "serve.");
        maybe(s, "host", c.host);
        maybe(s, "port", c.port);
    }
    return c;
}

PipelineConfig load_config(const fs::path& path, PipelineConfig base) {
    if (!fs::exists(path)) throw ConfigError(fmt::format("config file '{}' does not exist", path.string()));
    return config_from_json(read_file(path), std::move(base));
}

std::string config_to_json(const PipelineConfig& c) {
    ojson j;
    j["out"] = c.out.string();
    j["paths"] = {{"raw", c.raw_path().string()},
                  {"network", c.network_path().string()},
                  {"lrs", c.lrs_path().string()},
                  {"regions", c.regions_path().string()}};
    j["batch_size"] = c.batch_size;
    j["match"] = {{"sigma_gps_m", c.match.sigma_gps_m},
                  {"beta_m", c.match.beta_m},
                  {"candidate_radius_m", c.match.candidate_radius_m},
                  {"max_time_gap_s", c.match.max_time_gap_s},
                  {"max_route_ratio", c.match.max_route_ratio}};
    j["bin_width_mph"] = c.bin_width_mph;
    j["tz_offset"] = format_tz_offset(c.tz_offset_minutes);
    j["input_speed_unit"] = to_string(c.input_unit);
    j["workers"] = c.workers;
    j["write_rejects"] = c.write_rejects;
    const auto& s = c.synth;
    j["synth"] = {{"seed", s.seed},
                  {"grid_rows", s.grid_rows},
                  {"grid_cols", s.grid_cols},
                  {"segment_length_m", s.segment_length_m},
                  {"n_trips", s.n_trips},
                  {"sampling_period_s", s.sampling_period_s},
                  {"gps_noise_sigma_m", s.gps_noise_sigma_m},
                  {"shard_count", s.shard_count},
                  {"duplicate_rate", s.duplicate_rate},
                  {"split_degree", s.split_degree},
                  {"congested_fraction", s.congested_fraction},
                  {"invalid_rate", s.invalid_rate},
                  {"postal_code_rate", s.postal_code_rate},
                  {"region_rows", s.region_rows},
                  {"region_cols", s.region_cols},
                  {"origin_lat", s.origin_lat},
                  {"origin_lon", s.origin_lon},
                  {"start_date", s.start_date},
                  {"span_days", s.span_days},
                  {"journey_prefix", s.journey_prefix},
                  {"journey_offset", s.journey_offset},
                  {"min_hour", s.min_hour},
                  {"max_hour", s.max_hour}};
    j["serve"] = {{"host", c.host}, {"port", c.port}};
    return j.dump(2) + "\n";
}

std::string to_json(const StageReport& r) {
    ojson j;
    j["stage"] = r.stage;
    j["consumed"] = ojson::object();
    for (const auto& [k, v] : r.consumed) j["consumed"][k] = v;
    j["produced"] = ojson::object();
    for (const auto& [k, v] : r.produced) j["produced"][k] = v;
    j["wall_time_s"] = r.wall_time_s;
    return j.dump(2) + "\n";
}

StageReport stage_report_from_json(std::string_view text) {
    const json j = json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw DataError("stage report is not valid JSON");
    try {
        StageReport r;
        r.stage = j.at("stage").get<std::string>();
        for (const auto& [k, v] : j.at("consumed").items()) r.consumed[k] = v.get<std::uint64_t>();
        for (const auto& [k, v] : j.at("produced").items()) r.produced[k] = v.get<std::uint64_t>();
        r.wall_time_s = j.at("wall_time_s").get<double>();
        return r;
    } catch (const json::exception& e) {
        throw DataError(fmt::format("stage report is malformed: {}", e.what()));
    }
}

std::vector<fs::path> completed_files(const fs::path& dir, std::string_view stage) {
    if (!fs::is_directory(dir)) {
        throw MissingArtifactError(fmt::format("{} output '{}' is missing; run the {} stage first", stage, dir.string(), stage));
    }
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".ndjson") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        if (!has_done_marker(f)) {
            throw MissingArtifactError(
                fmt::format("{} output '{}' has no completion marker; rerun the {} stage", stage, f.string(), stage));
        }
    }
    return files;
}

StageReport run_synth(const PipelineConfig& config) {
    config.validate();
    const SynthConfig synth = effective_synth(config);
    synth.validate();
    Stopwatch clock;
    const SynthNetwork net = generate_network(synth);
    write_network(net, config.network_path().parent_path());
    if (config.lrs_path() != config.network_path().parent_path() / "lrs.csv" ||
        config.regions_path() != config.network_path().parent_path() / "regions.json") {
        write_file_atomic(config.lrs_path(), lrs_to_csv(net.lrs));
        write_file_atomic(config.regions_path(), regions_to_json(net.regions));
    }
    const auto trips = generate_trips(net, synth);
    clear_outputs(config.raw_path(), "shard-");
    fs::create_directories(config.ground_truth_path().parent_path());
    const auto truth = emit_shards(trips, synth, config.raw_path(), config.ground_truth_path());

    StageReport r;
    r.stage = "synth";
    r.produced = {{"segments", net.segments.size()},
                  {"lrs_rows", net.lrs.size()},
                  {"regions", net.regions.size()},
                  {"trips", truth.trips},
                  {"shards", synth.shard_count},
                  {"records", truth.total_records},
                  {"unique_points", truth.unique_points},
                  {"injected_duplicates", truth.injected_duplicates},
                  {"injected_invalid", truth.injected_invalid}};
    r.wall_time_s = clock.seconds();
    write_report(config, r);
    return r;
}

StageReport run_index(const PipelineConfig& config) {
    config.validate();
    Stopwatch clock;
    const auto raw = config.raw_path();
    if (!fs::is_directory(raw)) {
        throw MissingArtifactError(fmt::format("index: raw shard directory '{}' is missing", raw.string()));
    }
    const auto manifest = scan_shard_dir(raw);
    const auto index = build_journey_index(manifest, config.input_unit, config.workers);
    fs::create_directories(config.index_path().parent_path());
    write_file_atomic(config.index_path(), to_json(index));

    StageReport r;
    r.stage = "index";
    r.consumed = {{"shards", manifest.size()}};
    r.produced = {{"shards", index.shards.size()},
                  {"records", index.total_records()},
                  {"malformed", index.total_malformed()},
                  {"journeys", index.journeys.size()}};
    r.wall_time_s = clock.seconds();
    write_report(config, r);
    return r;
}

StageReport run_repack(const PipelineConfig& config) {
    config.validate();
    Stopwatch clock;
    if (!fs::exists(config.index_path())) {
        throw MissingArtifactError(
            fmt::format("repack: journey index '{}' is missing; run the index stage first", config.index_path().string()));
    }
    const auto index = journey_index_from_json(read_file(config.index_path()));
    const auto manifest = scan_shard_dir(config.raw_path());
    const auto plan = plan_packing(index, config.batch_size);

    clear_outputs(config.packed_dir(), "packed-");
    clear_outputs(config.packed_dir() / "rejects", "packed-");
    RepackOptions options;
    options.out_dir = config.packed_dir();
    options.default_unit = config.input_unit;
    options.workers = config.workers;
    options.write_rejects = config.write_rejects;
    RepackReport report = repack_execute(plan, manifest, options);
    report.malformed_records = index.total_malformed();
    if (report.input_points != index.total_records()) {
        throw DataError(fmt::format("repack: shards changed since indexing ({} records indexed, {} read)",
                                    index.total_records(), report.input_points));
    }
    if (!report.conserves()) throw DataError("repack: point tallies do not balance");
    fs::create_directories(config.reports_dir());
    write_file_atomic(config.reports_dir() / "repack_detail.json", to_json(report));

    StageReport r;
    r.stage = "repack";
    r.consumed = {{"records", report.input_points}, {"journeys", index.journeys.size()}};
    r.produced = {{"files", plan.groups.size()},
                  {"trips", report.trips_accepted},
                  {"points", report.output_points},
                  {"trips_rejected", report.rejected_total()},
                  {"dropped_duplicates", report.dropped_duplicates},
                  {"dropped_invalid", report.dropped_invalid}};
    r.wall_time_s = clock.seconds();
    write_report(config, r);
    return r;
}

StageReport run_match(const PipelineConfig& config) {
    config.validate();
    Stopwatch clock;
    const auto files = completed_files(config.packed_dir(), "repack");
    const RoadGraph graph = load_network(config.network_path());
    clear_outputs(config.matched_dir(), "packed-");
    fs::create_directories(config.matched_dir());

    StageReport r;
    r.stage = "match";
    std::uint64_t trips_in = 0, points_in = 0, matched = 0;
    for (const auto& file : files) {
        const PackedFile packed = read_packed_file(file);
        std::vector<std::pair<std::size_t, std::size_t>> ranges;  // [begin, end) per journey
        for (std::size_t i = 0; i < packed.records.size();) {
            std::size_t j = i + 1;
            while (j < packed.records.size() && packed.records[j].journey_id == packed.records[i].journey_id) ++j;
            ranges.push_back({i, j});
            i = j;
        }
        std::vector<MatchedTrip> out(ranges.size());
        const std::span<const RawPointRecord> all(packed.records);
        parallel_for(ranges.size(), config.workers, [&](std::size_t k) {
            out[k] = match_points(all.subspan(ranges[k].first, ranges[k].second - ranges[k].first), graph, config.match);
        });
        trips_in += ranges.size();
        points_in += packed.records.size();
        for (const auto& t : out) matched += t.matched_count();
        const auto target = config.matched_dir() / file.filename();
        write_file_atomic(target, format_matched_file(packed.header.file_id, out));
        write_done_marker(target);
    }
    r.consumed = {{"files", files.size()}, {"trips", trips_in}, {"points", points_in}};
    r.produced = {{"files", files.size()}, {"trips", trips_in}, {"points", points_in}, {"matched_points", matched}};
    r.wall_time_s = clock.seconds();
    write_report(config, r);
    return r;
}

StageReport run_summarize(const PipelineConfig& config) {
    config.validate();
    Stopwatch clock;
    const auto files = completed_files(config.matched_dir(), "match");
    if (!fs::exists(config.regions_path())) {
        throw MissingArtifactError(fmt::format("summarize: regions file '{}' is missing", config.regions_path().string()));
    }
    const RegionIndex regions = load_regions(config.regions_path());

    std::vector<MatchedTrip> trips;
    std::string digest_input;
    std::uint64_t points = 0;
    for (const auto& file : files) {
        digest_input += fmt::format("{}:{}\n", file.filename().string(), fnv1a_hex(read_file(file)));
        auto mf = read_matched_file(file);
        for (auto& t : mf.trips) {
            points += t.entries.size();
            trips.push_back(std::move(t));
        }
    }

    std::vector<TripSummary> trip_rows(trips.size());
    std::vector<std::vector<TraversalSummary>> per_trip(trips.size());
    parallel_for(trips.size(), config.workers, [&](std::size_t i) {
        Trip trip;
        trip.journey_id = trips[i].journey_id;
        for (const auto& e : trips[i].entries) trip.points.push_back(e.source);
        trip_rows[i] = summarize_trip(trip, regions, config.tz_offset_minutes);
        for (const auto& tr : segment_traversals(trips[i])) {
            per_trip[i].push_back(summarize_traversal(tr, config.tz_offset_minutes));
        }
    });
    std::vector<TraversalSummary> traversal_rows;
    for (auto& v : per_trip) {
        for (auto& t : v) traversal_rows.push_back(std::move(t));
    }
    std::sort(trip_rows.begin(), trip_rows.end(),
              [](const TripSummary& a, const TripSummary& b) { return a.journey_id < b.journey_id; });
    std::stable_sort(traversal_rows.begin(), traversal_rows.end(), [](const TraversalSummary& a, const TraversalSummary& b) {
        return std::tie(a.journey_id, a.run_index) < std::tie(b.journey_id, b.run_index);
    });

    const StoreHeader header{config.bin_width_mph, config.tz_offset_minutes, fnv1a_hex(digest_input)};
    const auto histograms = build_way_histograms(traversal_rows, config.bin_width_mph);
    const auto od = build_od_matrix(trip_rows);
    const auto dir = config.store_dir();
    fs::create_directories(dir);
    write_file_atomic(dir / kTripStoreFile, format_trip_store(header, trip_rows));
    write_file_atomic(dir / kTraversalStoreFile, format_traversal_store(header, traversal_rows));
    write_file_atomic(dir / kHistogramStoreFile, format_histogram_store(header, histograms));
    write_file_atomic(dir / kOdStoreFile, format_od_store(header, od));

    StageReport r;
    r.stage = "summarize";
    r.consumed = {{"files", files.size()}, {"trips", trips.size()}, {"points", points}};
    r.produced = {{"trip_rows", trip_rows.size()},
                  {"traversal_rows", traversal_rows.size()},
                  {"histogram_cells", histograms.cells().size()},
                  {"histogram_traversals", histograms.total()},
                  {"od_trips", od.total_trips()},
                  {"od_excluded_missing_zip", od.excluded_missing_zip}};
    r.wall_time_s = clock.seconds();
    write_report(config, r);
    return r;
}

std::vector<StageReport> run_all(const PipelineConfig& config) {
    config.validate();
    return {run_index(config), run_repack(config), run_match(config), run_summarize(config)};
}

}  // namespace telematics
