#include "telematics/summarize.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "telematics/errors.hpp"

namespace telematics {

TripSummary summarize_trip(const Trip& trip, const RegionIndex& regions, int tz_offset_minutes) {
    if (trip.points.empty()) throw std::invalid_argument("summarize_trip: trip has no points");
    const auto& first = trip.points.front();
    const auto& last = trip.points.back();

    TripSummary s;
    s.journey_id = trip.journey_id;
    s.start_time_ms = first.timestamp_ms;
    s.end_time_ms = last.timestamp_ms;
    s.start_point = first.position();
    s.end_point = last.position();
    s.start_zip = first.postal_code ? first.postal_code : zip_lookup(s.start_point, regions);
    s.end_zip = last.postal_code ? last.postal_code : zip_lookup(s.end_point, regions);
    s.duration_s = static_cast<double>(last.timestamp_ms - first.timestamp_ms) / 1000.0;
    s.path_length_m = path_length(positions(trip.points));
    s.straight_line_m = haversine_distance(s.start_point, s.end_point);
    s.point_count = trip.points.size();
    const LocalTime local = to_local(first.timestamp_ms, tz_offset_minutes);
    s.start_hour_local = local.hour;
    s.start_day_of_week = local.day_of_week;
    return s;
}

TraversalSummary summarize_traversal(const Traversal& traversal, int tz_offset_minutes) {
    if (traversal.points.empty()) throw std::invalid_argument("summarize_traversal: traversal has no points");
    std::vector<double> speeds;
    speeds.reserve(traversal.points.size());
    for (const auto& p : traversal.points) speeds.push_back(p.source.speed_mps);

    TraversalSummary s;
    s.journey_id = traversal.journey_id;
    s.way_id = traversal.way_id;
    s.run_index = traversal.run_index;
    s.speed = compute_speed_stats(speeds);
    s.dwell_time_s = static_cast<double>(traversal.exit_time_ms - traversal.entry_time_ms) / 1000.0;
    s.point_count = traversal.points.size();
    const LocalTime local = to_local(traversal.points.front().source.timestamp_ms, tz_offset_minutes);
    s.date_local = local.date;
    s.hour_local = local.hour;
    s.day_of_week = local.day_of_week;
    return s;
}

// --- histogram -----------------------------------------------------------------

std::int64_t speed_bin_index(double mean_speed_mph, double bin_width_mph) noexcept {
    return static_cast<std::int64_t>(std::floor(mean_speed_mph / bin_width_mph));
}

WaySpeedHistogram::WaySpeedHistogram(double bin_width_mph) : bin_width_mph_(bin_width_mph) {
    if (!(bin_width_mph > 0.0) || !std::isfinite(bin_width_mph)) throw ConfigError("bin_width_mph must be positive");
}

void WaySpeedHistogram::add(const TraversalSummary& s) {
    add_count({s.way_id, format_date(s.date_local), s.hour_local}, speed_bin_index(mps_to_mph(s.speed.mean), bin_width_mph_), 1);
}

void WaySpeedHistogram::add_count(const HistogramKey& key, std::int64_t bin, std::uint64_t count) {
    if (count == 0) return;
    cells_[key][bin] += count;
}

void WaySpeedHistogram::merge(const WaySpeedHistogram& other) {
    if (other.bin_width_mph_ != bin_width_mph_) {
        throw ConfigError(fmt::format("cannot merge histograms with bin widths {} and {}", bin_width_mph_, other.bin_width_mph_));
    }
    for (const auto& [key, bins] : other.cells_) {
        auto& mine = cells_[key];
        for (const auto& [bin, count] : bins) mine[bin] += count;
    }
}

std::uint64_t WaySpeedHistogram::total_for_way(std::string_view way_id) const {
    std::uint64_t n = 0;
    for (auto it = cells_.lower_bound({std::string(way_id), "", 0}); it != cells_.end() && it->first.way_id == way_id; ++it) {
        for (const auto& [bin, count] : it->second) n += count;
    }
    return n;
}

std::uint64_t WaySpeedHistogram::total() const {
    std::uint64_t n = 0;
    for (const auto& [key, bins] : cells_) {
        for (const auto& [bin, count] : bins) n += count;
    }
    return n;
}

WaySpeedHistogram build_way_histograms(std::span<const TraversalSummary> summaries, double bin_width_mph) {
    WaySpeedHistogram h(bin_width_mph);
    for (const auto& s : summaries) h.add(s);
    return h;
}

WaySpeedHistogram merge_summaries(const WaySpeedHistogram& a, const WaySpeedHistogram& b) {
    WaySpeedHistogram out = a;
    out.merge(b);
    return out;
}

// --- OD ----------------------------------------------------------------------------

std::uint64_t OdMatrix::total_trips() const {
    std::uint64_t n = 0;
    for (const auto& [key, count] : cells) n += count;
    return n;
}

void OdMatrix::merge(const OdMatrix& other) {
    for (const auto& [key, count] : other.cells) cells[key] += count;
    excluded_missing_zip += other.excluded_missing_zip;
}

OdMatrix build_od_matrix(std::span<const TripSummary> trips) {
    OdMatrix m;
    for (const auto& t : trips) {
        if (!t.start_zip || !t.end_zip) {
            ++m.excluded_missing_zip;
            continue;
        }
        ++m.cells[{*t.start_zip, *t.end_zip, t.start_hour_local, t.start_day_of_week}];
    }
    return m;
}

OdMatrix merge_summaries(const OdMatrix& a, const OdMatrix& b) {
    OdMatrix out = a;
    out.merge(b);
    return out;
}

// --- percentiles ---------------------------------------------------------------------

namespace {

void check_percentiles(std::span<const double> percentiles) {
    for (double p : percentiles) {
        if (!(p >= 0.0 && p <= 100.0)) throw std::invalid_argument(fmt::format("percentile {} outside [0, 100]", p));
    }
}

// Interpolates value_at(rank) for zero-based rank p/100*(n-1).
template <typename ValueAt>
std::vector<double> interpolate_ranks(std::uint64_t n, std::span<const double> percentiles, ValueAt&& value_at) {
    std::vector<double> out;
    out.reserve(percentiles.size());
    for (double p : percentiles) {
        const double rank = p / 100.0 * static_cast<double>(n - 1);
        const auto lo = static_cast<std::uint64_t>(std::floor(rank));
        const auto hi = std::min<std::uint64_t>(lo + 1, n - 1);
        const double frac = rank - static_cast<double>(lo);
        const double a = value_at(lo);
        out.push_back(frac == 0.0 ? a : a + frac * (value_at(hi) - a));
    }
    return out;
}

}  // namespace

std::optional<std::vector<double>> speed_percentiles(std::span<const double> values, std::span<const double> percentiles) {
    check_percentiles(percentiles);
    if (values.empty()) return std::nullopt;
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    return interpolate_ranks(sorted.size(), percentiles, [&](std::uint64_t k) { return sorted[k]; });
}

std::optional<std::vector<double>> speed_percentiles(const SpeedBins& bins, double bin_width,
                                                     std::span<const double> percentiles) {
    check_percentiles(percentiles);
    struct Span {
        std::uint64_t first_rank;
        std::uint64_t count;
        double lower;
    };
    std::vector<Span> spans;
    std::uint64_t n = 0;
    for (const auto& [bin, count] : bins) {
        if (count == 0) continue;
        spans.push_back({n, count, static_cast<double>(bin) * bin_width});
        n += count;
    }
    if (n == 0) return std::nullopt;

    return interpolate_ranks(n, percentiles, [&](std::uint64_t k) {
        const auto it = std::upper_bound(spans.begin(), spans.end(), k,
                                         [](std::uint64_t rank, const Span& s) { return rank < s.first_rank; });
        const Span& s = *std::prev(it);
        return s.lower + (static_cast<double>(k - s.first_rank) + 0.5) / static_cast<double>(s.count) * bin_width;
    });
}

}  // namespace telematics
