#pragma once

#include <cmath>

namespace liplab {

/// 2D point in pixel coordinates: origin at the top-left pixel center, x right, y down.
struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend constexpr Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
  friend constexpr Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
  friend constexpr Point2 operator*(double s, Point2 p) { return {s * p.x, s * p.y}; }
  friend constexpr bool operator==(Point2 a, Point2 b) = default;
};

inline double dot(Point2 a, Point2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Point2 a, Point2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Point2 p) { return std::hypot(p.x, p.y); }
inline double distance(Point2 a, Point2 b) { return norm(a - b); }
inline Point2 lerp(Point2 a, Point2 b, double t) { return (1.0 - t) * a + t * b; }

/// Similarity transform p -> scale * R(angle) * p + offset.
struct Similarity {
  double scale = 1.0;
  double angle = 0.0;
  Point2 offset{};

  Point2 apply(Point2 p) const {
    const double c = std::cos(angle) * scale;
    const double s = std::sin(angle) * scale;
    return {c * p.x - s * p.y + offset.x, s * p.x + c * p.y + offset.y};
  }
};

}  // namespace liplab
