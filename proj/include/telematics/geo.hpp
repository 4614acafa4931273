#pragma once

#include <span>

namespace telematics {

inline constexpr double kEarthRadiusMeters = 6'371'000.0;
inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kMetersPerMile = 1609.344;
inline constexpr double kMpsPerMph = 0.44704;

// WGS84 decimal degrees.
struct GeoPoint {
    double latitude = 0.0;
    double longitude = 0.0;

    friend bool operator==(const GeoPoint&, const GeoPoint&) = default;
};

bool is_valid(const GeoPoint& p) noexcept;

// Great-circle distance in meters on a sphere of radius kEarthRadiusMeters.
double haversine_distance(const GeoPoint& a, const GeoPoint& b) noexcept;

// Sum of haversine distances over consecutive pairs; 0 for fewer than 2 points.
double path_length(std::span<const GeoPoint> points) noexcept;

// Closest point on the great-circle arc a->b to p.
struct ArcProjection {
    GeoPoint point;
    double distance_along = 0.0;  // meters from a
    double distance = 0.0;        // meters from p
};

ArcProjection project_onto_arc(const GeoPoint& p, const GeoPoint& a, const GeoPoint& b) noexcept;

// Closest point on a polyline. distance_along is measured from the first vertex.
ArcProjection project_onto_polyline(const GeoPoint& p, std::span<const GeoPoint> polyline) noexcept;

// Point at `meters` along the polyline from its first vertex (clamped to its ends).
GeoPoint interpolate_along(std::span<const GeoPoint> polyline, double meters) noexcept;

// Displaces p by east/north meters in its local tangent frame.
GeoPoint offset_meters(const GeoPoint& p, double east, double north) noexcept;

// Initial bearing a->b in degrees clockwise from true north, in [0, 360).
double initial_bearing(const GeoPoint& a, const GeoPoint& b) noexcept;

}  // namespace telematics
