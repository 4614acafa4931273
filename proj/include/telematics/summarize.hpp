#pragma once

#include <chrono>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "telematics/domain.hpp"
#include "telematics/matcher.hpp"
#include "telematics/roadgraph.hpp"

namespace telematics {

inline constexpr double kDefaultBinWidthMph = 5.0;
inline constexpr int kDefaultTzOffsetMinutes = -5 * 60;

struct TripSummary {
    std::string journey_id;
    std::int64_t start_time_ms = 0;
    std::int64_t end_time_ms = 0;
    GeoPoint start_point;
    GeoPoint end_point;
    std::optional<std::string> start_zip;
    std::optional<std::string> end_zip;
    double duration_s = 0.0;
    double path_length_m = 0.0;
    double straight_line_m = 0.0;
    std::size_t point_count = 0;
    int start_hour_local = 0;
    DayOfWeek start_day_of_week = DayOfWeek::mon;

    friend bool operator==(const TripSummary&, const TripSummary&) = default;
};

// Zip codes come from the first/last point's postal_code metadata when present,
// otherwise from the region index.
TripSummary summarize_trip(const Trip& trip, const RegionIndex& regions, int tz_offset_minutes = kDefaultTzOffsetMinutes);

struct TraversalSummary {
    std::string journey_id;
    std::string way_id;
    std::size_t run_index = 0;
    SpeedStats speed;  // m/s
    double dwell_time_s = 0.0;
    std::size_t point_count = 0;
    std::chrono::year_month_day date_local;
    int hour_local = 0;
    DayOfWeek day_of_week = DayOfWeek::mon;
};

// Local date/hour/day come from the traversal's first point.
TraversalSummary summarize_traversal(const Traversal& traversal, int tz_offset_minutes = kDefaultTzOffsetMinutes);

// --- way x date x hour speed-bin histogram -----------------------------------

std::int64_t speed_bin_index(double mean_speed_mph, double bin_width_mph) noexcept;

struct HistogramKey {
    std::string way_id;
    std::string date;  // YYYY-MM-DD, local
    int hour = 0;

    auto operator<=>(const HistogramKey&) const = default;
};

using SpeedBins = std::map<std::int64_t, std::uint64_t>;

class WaySpeedHistogram {
public:
    explicit WaySpeedHistogram(double bin_width_mph = kDefaultBinWidthMph);

    double bin_width_mph() const noexcept { return bin_width_mph_; }
    const std::map<HistogramKey, SpeedBins>& cells() const noexcept { return cells_; }

    void add(const TraversalSummary& summary);
    void add_count(const HistogramKey& key, std::int64_t bin, std::uint64_t count);
    // Throws ConfigError when bin widths differ.
    void merge(const WaySpeedHistogram& other);

    std::uint64_t total_for_way(std::string_view way_id) const;
    std::uint64_t total() const;

    friend bool operator==(const WaySpeedHistogram&, const WaySpeedHistogram&) = default;

private:
    double bin_width_mph_;
    std::map<HistogramKey, SpeedBins> cells_;
};

WaySpeedHistogram build_way_histograms(std::span<const TraversalSummary> summaries,
                                       double bin_width_mph = kDefaultBinWidthMph);

WaySpeedHistogram merge_summaries(const WaySpeedHistogram& a, const WaySpeedHistogram& b);

// --- zip-level OD ------------------------------------------------------------

struct OdKey {
    std::string origin_zip;
    std::string dest_zip;
    int start_hour_local = 0;
    DayOfWeek day_of_week = DayOfWeek::mon;

    auto operator<=>(const OdKey&) const = default;
};

struct OdMatrix {
    std::map<OdKey, std::uint64_t> cells;
    std::uint64_t excluded_missing_zip = 0;

    std::uint64_t total_trips() const;
    void merge(const OdMatrix& other);

    friend bool operator==(const OdMatrix&, const OdMatrix&) = default;
};

// Trips lacking either zip are excluded and tallied; intra-zip trips are kept.
OdMatrix build_od_matrix(std::span<const TripSummary> trips);

OdMatrix merge_summaries(const OdMatrix& a, const OdMatrix& b);

// --- percentiles --------------------------------------------------------------

// Exact mode: linear interpolation between order statistics at zero-based
// rank p/100*(n-1). nullopt for an empty distribution. Throws
// std::invalid_argument for percentiles outside [0, 100].
std::optional<std::vector<double>> speed_percentiles(std::span<const double> values, std::span<const double> percentiles);

// Histogram mode: the same rank rule over the binned counts, where the c
// values of a bin [lower, lower+width) are taken to sit at lower + (i+0.5)*width/c.
std::optional<std::vector<double>> speed_percentiles(const SpeedBins& bins, double bin_width,
                                                     std::span<const double> percentiles);

}  // namespace telematics
