#include "telematics/geo.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace telematics {
namespace {

using Vec3 = std::array<double, 3>;

constexpr double kDegToRad = kPi / 180.0;
constexpr double kRadToDeg = 180.0 / kPi;

Vec3 to_unit(const GeoPoint& p) noexcept {
    const double lat = p.latitude * kDegToRad;
    const double lon = p.longitude * kDegToRad;
    return {std::cos(lat) * std::cos(lon), std::cos(lat) * std::sin(lon), std::sin(lat)};
}

GeoPoint from_unit(const Vec3& v) noexcept {
    const double lat = std::atan2(v[2], std::hypot(v[0], v[1]));
    const double lon = std::atan2(v[1], v[0]);
    return {lat * kRadToDeg, lon * kRadToDeg};
}

Vec3 cross(const Vec3& a, const Vec3& b) noexcept {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

double dot(const Vec3& a, const Vec3& b) noexcept {
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

double norm(const Vec3& v) noexcept { return std::sqrt(dot(v, v)); }

Vec3 scaled(const Vec3& v, double s) noexcept { return {v[0] * s, v[1] * s, v[2] * s}; }

}  // namespace

bool is_valid(const GeoPoint& p) noexcept {
    return std::isfinite(p.latitude) && std::isfinite(p.longitude) && p.latitude >= -90.0 &&
           p.latitude <= 90.0 && p.longitude >= -180.0 && p.longitude <= 180.0;
}

double haversine_distance(const GeoPoint& a, const GeoPoint& b) noexcept {
    const double lat1 = a.latitude * kDegToRad;
    const double lat2 = b.latitude * kDegToRad;
    const double dlat = (b.latitude - a.latitude) * kDegToRad;
    const double dlon = (b.longitude - a.longitude) * kDegToRad;
    const double s1 = std::sin(dlat / 2.0);
    const double s2 = std::sin(dlon / 2.0);
    const double h = std::clamp(s1 * s1 + std::cos(lat1) * std::cos(lat2) * s2 * s2, 0.0, 1.0);
    return 2.0 * kEarthRadiusMeters * std::asin(std::sqrt(h));
}

double path_length(std::span<const GeoPoint> points) noexcept {
    double total = 0.0;
    for (std::size_t i = 1; i < points.size(); ++i) {
        total += haversine_distance(points[i - 1], points[i]);
    }
    return total;
}

ArcProjection project_onto_arc(const GeoPoint& p, const GeoPoint& a, const GeoPoint& b) noexcept {
    const Vec3 va = to_unit(a);
    const Vec3 vb = to_unit(b);
    const Vec3 vp = to_unit(p);

    auto endpoint = [&](const GeoPoint& e, double along) {
        return ArcProjection{e, along, haversine_distance(p, e)};
    };
    auto nearer_endpoint = [&] {
        const double da = haversine_distance(p, a);
        const double db = haversine_distance(p, b);
        return da <= db ? ArcProjection{a, 0.0, da}
                        : ArcProjection{b, haversine_distance(a, b), db};
    };

    Vec3 n = cross(va, vb);
    const double n_len = norm(n);
    if (n_len < 1e-15) return endpoint(a, 0.0);  // degenerate arc
    n = scaled(n, 1.0 / n_len);

    const double off_plane = dot(vp, n);
    Vec3 c = {vp[0] - off_plane * n[0], vp[1] - off_plane * n[1], vp[2] - off_plane * n[2]};
    const double c_len = norm(c);
    if (c_len < 1e-15) return nearer_endpoint();  // p is a pole of the arc's circle
    c = scaled(c, 1.0 / c_len);

    const bool after_a = dot(cross(va, c), n) >= 0.0;
    const bool before_b = dot(cross(c, vb), n) >= 0.0;
    if (!(after_a && before_b)) return nearer_endpoint();

    const GeoPoint snapped = from_unit(c);
    return {snapped, haversine_distance(a, snapped), haversine_distance(p, snapped)};
}

ArcProjection project_onto_polyline(const GeoPoint& p, std::span<const GeoPoint> polyline) noexcept {
    if (polyline.empty()) return {p, 0.0, std::numeric_limits<double>::infinity()};
    if (polyline.size() == 1) return {polyline[0], 0.0, haversine_distance(p, polyline[0])};

    ArcProjection best{polyline[0], 0.0, std::numeric_limits<double>::infinity()};
    double offset = 0.0;
    for (std::size_t i = 1; i < polyline.size(); ++i) {
        ArcProjection proj = project_onto_arc(p, polyline[i - 1], polyline[i]);
        if (proj.distance < best.distance) {
            best = proj;
            best.distance_along += offset;
        }
        offset += haversine_distance(polyline[i - 1], polyline[i]);
    }
    best.distance_along = std::clamp(best.distance_along, 0.0, offset);
    return best;
}

GeoPoint interpolate_along(std::span<const GeoPoint> polyline, double meters) noexcept {
    if (polyline.empty()) return {};
    if (meters <= 0.0 || polyline.size() == 1) return polyline.front();
    double walked = 0.0;
    for (std::size_t i = 1; i < polyline.size(); ++i) {
        const double len = haversine_distance(polyline[i - 1], polyline[i]);
        if (walked + len >= meters && len > 0.0) {
            // Spherical linear interpolation along the arc.
            const double omega = len / kEarthRadiusMeters;
            const double t = (meters - walked) / len;
            const Vec3 va = to_unit(polyline[i - 1]);
            const Vec3 vb = to_unit(polyline[i]);
            const double s = std::sin(omega);
            const double wa = std::sin((1.0 - t) * omega) / s;
            const double wb = std::sin(t * omega) / s;
            return from_unit({wa * va[0] + wb * vb[0], wa * va[1] + wb * vb[1], wa * va[2] + wb * vb[2]});
        }
        walked += len;
    }
    return polyline.back();
}

GeoPoint offset_meters(const GeoPoint& p, double east, double north) noexcept {
    const double dlat = north / kEarthRadiusMeters * kRadToDeg;
    const double dlon = east / (kEarthRadiusMeters * std::cos(p.latitude * kDegToRad)) * kRadToDeg;
    return {p.latitude + dlat, p.longitude + dlon};
}

double initial_bearing(const GeoPoint& a, const GeoPoint& b) noexcept {
    const double lat1 = a.latitude * kDegToRad;
    const double lat2 = b.latitude * kDegToRad;
    const double dlon = (b.longitude - a.longitude) * kDegToRad;
    const double y = std::sin(dlon) * std::cos(lat2);
    const double x = std::cos(lat1) * std::sin(lat2) - std::sin(lat1) * std::cos(lat2) * std::cos(dlon);
    double deg = std::atan2(y, x) * kRadToDeg;
    if (deg < 0.0) deg += 360.0;
    if (deg >= 360.0) deg -= 360.0;
    return deg;
}

}  // namespace telematics
