#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "telematics/geo.hpp"

namespace telematics {

// Trip validation thresholds applied to every journey before it is kept.
inline constexpr double kMinTripPathMeters = 100.0;
inline constexpr double kMaxTripDurationSeconds = 86'400.0;

enum class Ignition { on, off, unknown };

std::string_view to_string(Ignition v) noexcept;
std::optional<Ignition> parse_ignition(std::string_view s) noexcept;

// One telemetry sample. Speed is always meters/second once ingested.
struct RawPointRecord {
    std::string journey_id;
    std::int64_t timestamp_ms = 0;  // UTC epoch milliseconds
    double latitude = 0.0;
    double longitude = 0.0;
    std::optional<double> heading;  // degrees clockwise from true north
    double speed_mps = 0.0;
    Ignition ignition = Ignition::unknown;
    std::optional<std::string> geohash;
    std::optional<std::string> postal_code;
    std::optional<std::string> country_code;

    GeoPoint position() const noexcept { return {latitude, longitude}; }

    friend bool operator==(const RawPointRecord&, const RawPointRecord&) = default;
};

// Coordinates in range, timestamp positive, speed finite and non-negative.
bool is_valid_record(const RawPointRecord& r) noexcept;

struct Trip {
    std::string journey_id;
    std::vector<RawPointRecord> points;
    double path_length_m = 0.0;
    double duration_s = 0.0;
    GeoPoint start_point;
    GeoPoint end_point;
};

// Listed in check order: the first failing check is the one reported.
enum class RejectionReason { no_valid_coordinates, insufficient_points, path_too_short, duration_too_long };

inline constexpr RejectionReason kAllRejectionReasons[] = {
    RejectionReason::no_valid_coordinates, RejectionReason::insufficient_points,
    RejectionReason::path_too_short, RejectionReason::duration_too_long};

std::string_view to_string(RejectionReason r) noexcept;

using TripValidation = std::variant<Trip, RejectionReason>;

struct SpeedStats {
    double mean = 0.0;
    double min = 0.0;
    double max = 0.0;
    double stddev = 0.0;  // population
};

// Requires at least one sample.
SpeedStats compute_speed_stats(std::span<const double> speeds);

struct CleanResult {
    std::vector<RawPointRecord> points;
    std::size_t dropped_invalid = 0;
    std::size_t dropped_duplicates = 0;
};

// Drops invalid records, sorts by timestamp (stable), keeps the first record
// encountered for each timestamp.
CleanResult clean_points_detailed(std::vector<RawPointRecord> points);
std::vector<RawPointRecord> clean_points(std::vector<RawPointRecord> points);

// Expects the output of clean_points.
TripValidation validate_trip(std::vector<RawPointRecord> points);

std::vector<GeoPoint> positions(std::span<const RawPointRecord> points);

// --- units -----------------------------------------------------------------

enum class SpeedUnit { mps, mph, kph };

std::string_view to_string(SpeedUnit u) noexcept;
std::optional<SpeedUnit> parse_speed_unit(std::string_view s) noexcept;
double to_mps(double value, SpeedUnit unit) noexcept;
double from_mps(double mps, SpeedUnit unit) noexcept;
inline double mps_to_mph(double mps) noexcept { return mps / kMpsPerMph; }
inline double mph_to_mps(double mph) noexcept { return mph * kMpsPerMph; }

// --- local time ------------------------------------------------------------

enum class DayOfWeek { mon, tue, wed, thu, fri, sat, sun };

inline constexpr int kDaysPerWeek = 7;
inline constexpr int kHoursPerDay = 24;

std::string_view to_string(DayOfWeek d) noexcept;
std::optional<DayOfWeek> parse_day_of_week(std::string_view s) noexcept;
inline bool is_weekend(DayOfWeek d) noexcept { return d == DayOfWeek::sat || d == DayOfWeek::sun; }

struct LocalTime {
    std::chrono::year_month_day date;
    int hour = 0;
    DayOfWeek day_of_week = DayOfWeek::mon;
};

// Local time = UTC + fixed offset.
LocalTime to_local(std::int64_t utc_ms, int tz_offset_minutes) noexcept;

std::string format_date(std::chrono::year_month_day d);
std::optional<std::chrono::year_month_day> parse_date(std::string_view s) noexcept;
DayOfWeek day_of_week(std::chrono::year_month_day d) noexcept;

// "+HH:MM" / "-HH:MM" <-> minutes.
std::optional<int> parse_tz_offset(std::string_view s) noexcept;
std::string format_tz_offset(int minutes);

}  // namespace telematics
