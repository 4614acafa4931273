#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unistd.h>
#include <vector>

#include "telematics/domain.hpp"
#include "telematics/geo.hpp"
#include "telematics/matcher.hpp"
#include "telematics/pipeline.hpp"

namespace testsupport {

namespace fs = std::filesystem;
using namespace telematics;

class TempDir {
public:
    explicit TempDir(const std::string& tag = "t") {
        static std::atomic<int> counter{0};
        path_ = fs::temp_directory_path() /
                ("telematics-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        if (!std::getenv("KEEP_TEST_DIRS")) fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    fs::path path_;
};

inline RawPointRecord point(const std::string& jid, std::int64_t ts_ms, double lat, double lon, double speed = 10.0) {
    RawPointRecord r;
    r.journey_id = jid;
    r.timestamp_ms = ts_ms;
    r.latitude = lat;
    r.longitude = lon;
    r.speed_mps = speed;
    r.ignition = Ignition::on;
    return r;
}

// Great-circle distance from the chord between unit vectors, independent of
// the haversine formulation.
inline double chord_distance(const GeoPoint& a, const GeoPoint& b) {
    const double d2r = 3.14159265358979323846 / 180.0;
    const double ax = std::cos(a.latitude * d2r) * std::cos(a.longitude * d2r);
    const double ay = std::cos(a.latitude * d2r) * std::sin(a.longitude * d2r);
    const double az = std::sin(a.latitude * d2r);
    const double bx = std::cos(b.latitude * d2r) * std::cos(b.longitude * d2r);
    const double by = std::cos(b.latitude * d2r) * std::sin(b.longitude * d2r);
    const double bz = std::sin(b.latitude * d2r);
    const double chord = std::sqrt((ax - bx) * (ax - bx) + (ay - by) * (ay - by) + (az - bz) * (az - bz));
    return 2.0 * 6'371'000.0 * std::asin(std::min(1.0, chord / 2.0));
}

// Brute-force trip acceptance: >100 m of path, <24 h, at least two points.
inline bool oracle_accepts(const std::vector<RawPointRecord>& pts) {
    if (pts.size() < 2) return false;
    double len = 0.0;
    for (std::size_t i = 1; i < pts.size(); ++i) len += chord_distance(pts[i - 1].position(), pts[i].position());
    const double secs = static_cast<double>(pts.back().timestamp_ms - pts.front().timestamp_ms) / 1000.0;
    return len > 100.0 && secs < 86400.0;
}

struct OraclePath {
    std::vector<std::size_t> states;
    double score = -std::numeric_limits<double>::infinity();
};

// Enumerates every state sequence; first maximum in lexicographic order wins.
inline OraclePath exhaustive_viterbi(std::span<const LatticeStep> steps) {
    OraclePath best;
    const std::size_t n = steps.size();
    std::vector<std::size_t> cur(n, 0);
    while (true) {
        double s = steps[0].emission_log[cur[0]];
        for (std::size_t t = 1; t < n; ++t) s += steps[t].transition_log[cur[t - 1]][cur[t]] + steps[t].emission_log[cur[t]];
        if (s > best.score) {
            best.score = s;
            best.states = cur;
        }
        std::size_t t = n;
        while (t > 0) {
            --t;
            if (++cur[t] < steps[t].emission_log.size()) break;
            cur[t] = 0;
            if (t == 0) return best;
        }
        if (n == 0) return best;
    }
}

inline double path_score(std::span<const LatticeStep> steps, const std::vector<std::size_t>& states) {
    double s = steps[0].emission_log[states[0]];
    for (std::size_t t = 1; t < steps.size(); ++t) {
        s += steps[t].transition_log[states[t - 1]][states[t]] + steps[t].emission_log[states[t]];
    }
    return s;
}

// Percentile by explicit order statistics: rank p/100*(n-1) between floor and ceil.
inline double oracle_percentile(std::vector<double> values, double p) {
    std::sort(values.begin(), values.end());
    const double rank = p / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const auto hi = static_cast<std::size_t>(std::ceil(rank));
    return values[lo] + (rank - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

// --- fixed-seed fixture corpus used by the service goldens ----------------------

inline PipelineConfig fixture_config(const fs::path& out, std::size_t workers) {
    PipelineConfig c;
    c.out = out;
    c.workers = workers;
    c.batch_size = 100;
    c.synth.seed = 20240304;
    c.synth.grid_rows = 5;
    c.synth.grid_cols = 5;
    c.synth.n_trips = 300;
    c.synth.gps_noise_sigma_m = 3.0;
    c.synth.shard_count = 6;
    c.synth.split_degree = 3;
    c.synth.duplicate_rate = 0.02;
    c.synth.congested_fraction = 0.3;
    c.synth.postal_code_rate = 0.5;
    return c;
}

inline PipelineConfig run_fixture(const fs::path& out, std::size_t workers) {
    const PipelineConfig c = fixture_config(out, workers);
    run_synth(c);
    run_all(c);
    return c;
}

struct GoldenRequest {
    const char* name;
    const char* target;
};

// One or more requests per endpoint family.
inline constexpr GoldenRequest kGoldenRequests[] = {
    {"speed_distribution_all", "/segments/h2_2/speed-distribution"},
    {"speed_distribution_weekday_peaks", "/segments/h2_2/speed-distribution?days=mon,tue,wed,thu,fri&hours=7-9,17"},
    {"speed_distribution_3am", "/segments/h2_2/speed-distribution?hours=3"},
    {"route_overview_median", "/routes/Route%201/overview?metric=median"},
    {"route_overview_p95_minus_limit", "/routes/Route%201/overview?metric=p95_minus_limit"},
    {"routes", "/routes"},
    {"route_segments", "/routes/Route%202/segments"},
    {"od_origin", "/od?zip=23450&direction=origin"},
    {"od_destination_intra", "/od?zip=23450&direction=destination&include_intra=true"},
    {"heatmap_noon_weekday_start", "/heatmap?hour=12&dayclass=weekday&endpoint=start"},
    {"heatmap_5pm_weekend_end", "/heatmap?hour=17&dayclass=weekend&endpoint=end"},
};

inline fs::path golden_path(const char* name) { return fs::path(TELEMATICS_GOLDEN_DIR) / (std::string(name) + ".json"); }

inline bool updating_goldens() { return std::getenv("UPDATE_GOLDEN") != nullptr; }

}  // namespace testsupport
