#include "telematics/domain.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace telematics {

std::string_view to_string(Ignition v) noexcept {
    switch (v) {
        case Ignition::on: return "on";
        case Ignition::off: return "off";
        case Ignition::unknown: break;
    }
    return "unknown";
}

std::optional<Ignition> parse_ignition(std::string_view s) noexcept {
    if (s == "on") return Ignition::on;
    if (s == "off") return Ignition::off;
    if (s == "unknown" || s.empty()) return Ignition::unknown;
    return std::nullopt;
}

bool is_valid_record(const RawPointRecord& r) noexcept {
    return is_valid(r.position()) && r.timestamp_ms > 0 && std::isfinite(r.speed_mps) && r.speed_mps >= 0.0;
}

std::string_view to_string(RejectionReason r) noexcept {
    switch (r) {
        case RejectionReason::no_valid_coordinates: return "no_valid_coordinates";
        case RejectionReason::insufficient_points: return "insufficient_points";
        case RejectionReason::path_too_short: return "path_too_short";
        case RejectionReason::duration_too_long: return "duration_too_long";
    }
    return "unknown";
}

SpeedStats compute_speed_stats(std::span<const double> speeds) {
    if (speeds.empty()) throw std::invalid_argument("compute_speed_stats: no samples");
    const auto [lo, hi] = std::minmax_element(speeds.begin(), speeds.end());
    double sum = 0.0;
    for (double v : speeds) sum += v;
    const double n = static_cast<double>(speeds.size());
    const double mean = sum / n;
    double sq = 0.0;
    for (double v : speeds) sq += (v - mean) * (v - mean);
    // Rounding can push the mean a hair outside [min, max] for near-constant input.
    return {std::clamp(mean, *lo, *hi), *lo, *hi, std::sqrt(sq / n)};
}

CleanResult clean_points_detailed(std::vector<RawPointRecord> points) {
    CleanResult out;
    const auto valid_end = std::stable_partition(points.begin(), points.end(), is_valid_record);
    out.dropped_invalid = static_cast<std::size_t>(points.end() - valid_end);
    points.erase(valid_end, points.end());

    std::stable_sort(points.begin(), points.end(), [](const RawPointRecord& a, const RawPointRecord& b) {
        return a.timestamp_ms < b.timestamp_ms;
    });
    const auto unique_end = std::unique(points.begin(), points.end(), [](const RawPointRecord& a, const RawPointRecord& b) {
        return a.timestamp_ms == b.timestamp_ms;
    });
    out.dropped_duplicates = static_cast<std::size_t>(points.end() - unique_end);
    points.erase(unique_end, points.end());
    out.points = std::move(points);
    return out;
}

std::vector<RawPointRecord> clean_points(std::vector<RawPointRecord> points) {
    return clean_points_detailed(std::move(points)).points;
}

std::vector<GeoPoint> positions(std::span<const RawPointRecord> points) {
    std::vector<GeoPoint> out;
    out.reserve(points.size());
    for (const auto& p : points) out.push_back(p.position());
    return out;
}

TripValidation validate_trip(std::vector<RawPointRecord> points) {
    if (points.empty()) return RejectionReason::no_valid_coordinates;
    if (points.size() < 2) return RejectionReason::insufficient_points;

    const auto geo = positions(points);
    const double length = path_length(geo);
    if (!(length > kMinTripPathMeters)) return RejectionReason::path_too_short;

    const double duration = static_cast<double>(points.back().timestamp_ms - points.front().timestamp_ms) / 1000.0;
    if (!(duration < kMaxTripDurationSeconds)) return RejectionReason::duration_too_long;

    Trip trip;
    trip.journey_id = points.front().journey_id;
    trip.path_length_m = length;
    trip.duration_s = duration;
    trip.start_point = geo.front();
    trip.end_point = geo.back();
    trip.points = std::move(points);
    return trip;
}

// --- units -----------------------------------------------------------------

std::string_view to_string(SpeedUnit u) noexcept {
    switch (u) {
        case SpeedUnit::mps: return "mps";
        case SpeedUnit::mph: return "mph";
        case SpeedUnit::kph: return "kph";
    }
    return "mps";
}

std::optional<SpeedUnit> parse_speed_unit(std::string_view s) noexcept {
    if (s == "mps") return SpeedUnit::mps;
    if (s == "mph") return SpeedUnit::mph;
    if (s == "kph") return SpeedUnit::kph;
    return std::nullopt;
}

double to_mps(double value, SpeedUnit unit) noexcept {
    switch (unit) {
        case SpeedUnit::mph: return value * kMpsPerMph;
        case SpeedUnit::kph: return value / 3.6;
        case SpeedUnit::mps: break;
    }
    return value;
}

double from_mps(double mps, SpeedUnit unit) noexcept {
    switch (unit) {
        case SpeedUnit::mph: return mps / kMpsPerMph;
        case SpeedUnit::kph: return mps * 3.6;
        case SpeedUnit::mps: break;
    }
    return mps;
}

// --- local time ------------------------------------------------------------

namespace {
constexpr std::array<std::string_view, 7> kDayNames = {"mon", "tue", "wed", "thu", "fri", "sat", "sun"};
}

std::string_view to_string(DayOfWeek d) noexcept { return kDayNames[static_cast<std::size_t>(d)]; }

std::optional<DayOfWeek> parse_day_of_week(std::string_view s) noexcept {
    for (std::size_t i = 0; i < kDayNames.size(); ++i) {
        if (kDayNames[i] == s) return static_cast<DayOfWeek>(i);
    }
    return std::nullopt;
}

DayOfWeek day_of_week(std::chrono::year_month_day d) noexcept {
    const std::chrono::weekday wd{std::chrono::sys_days{d}};
    return static_cast<DayOfWeek>(wd.iso_encoding() - 1);
}

LocalTime to_local(std::int64_t utc_ms, int tz_offset_minutes) noexcept {
    using namespace std::chrono;
    const sys_time<milliseconds> t{milliseconds{utc_ms} + minutes{tz_offset_minutes}};
    const sys_days day = floor<days>(t);
    const auto hour = duration_cast<hours>(t - day).count();
    const year_month_day ymd{day};
    return {ymd, static_cast<int>(hour), day_of_week(ymd)};
}

std::string format_date(std::chrono::year_month_day d) {
    return fmt::format("{:04d}-{:02d}-{:02d}", static_cast<int>(d.year()), static_cast<unsigned>(d.month()),
                       static_cast<unsigned>(d.day()));
}

std::optional<std::chrono::year_month_day> parse_date(std::string_view s) noexcept {
    int y = 0;
    unsigned m = 0, d = 0;
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
    auto digits = [&](std::size_t from, std::size_t len, auto& out) {
        out = 0;
        for (std::size_t i = from; i < from + len; ++i) {
            if (s[i] < '0' || s[i] > '9') return false;
            out = out * 10 + static_cast<unsigned>(s[i] - '0');
        }
        return true;
    };
    unsigned yy = 0;
    if (!digits(0, 4, yy) || !digits(5, 2, m) || !digits(8, 2, d)) return std::nullopt;
    y = static_cast<int>(yy);
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
    if (!ymd.ok()) return std::nullopt;
    return ymd;
}

std::optional<int> parse_tz_offset(std::string_view s) noexcept {
    if (s == "Z" || s == "UTC") return 0;
    if (s.size() != 6 || (s[0] != '+' && s[0] != '-') || s[3] != ':') return std::nullopt;
    auto two = [&](std::size_t i) -> int {
        if (s[i] < '0' || s[i] > '9' || s[i + 1] < '0' || s[i + 1] > '9') return -1;
        return (s[i] - '0') * 10 + (s[i + 1] - '0');
    };
    const int h = two(1);
    const int m = two(4);
    if (h < 0 || m < 0 || h > 14 || m > 59) return std::nullopt;
    const int total = h * 60 + m;
    return s[0] == '-' ? -total : total;
}

std::string format_tz_offset(int minutes) {
    const char sign = minutes < 0 ? '-' : '+';
    const int a = std::abs(minutes);
    return fmt::format("{}{:02d}:{:02d}", sign, a / 60, a % 60);
}

}  // namespace telematics
