#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <variant>
#include <vector>

namespace sg {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double dot(const Vec2& o) const { return x * o.x + y * o.y; }
  double cross(const Vec2& o) const { return x * o.y - y * o.x; }
  double norm() const { return std::hypot(x, y); }
};

inline Vec2 rotate(const Vec2& v, double angle) {
  double c = std::cos(angle), s = std::sin(angle);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

// Normalizes to (-pi, pi].
inline double normalize_angle(double a) {
  const double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  if (a <= -std::numbers::pi) a += two_pi;
  if (a > std::numbers::pi) a -= two_pi;
  return a;
}

struct Rect {
  Vec2 lo;
  Vec2 hi;

  bool contains(const Vec2& p) const {
    return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y;
  }
  Vec2 clamp(const Vec2& p) const {
    return {std::clamp(p.x, lo.x, hi.x), std::clamp(p.y, lo.y, hi.y)};
  }
  Rect shrunk(double margin) const {
    return {{lo.x + margin, lo.y + margin}, {hi.x - margin, hi.y - margin}};
  }
  double width() const { return hi.x - lo.x; }
  double height() const { return hi.y - lo.y; }
};

// World-frame object footprint: a disc or a convex polygon (CCW vertices).
struct Disc {
  Vec2 center;
  double radius = 0.0;
};

struct Poly {
  std::vector<Vec2> verts;  // CCW
};

using Footprint = std::variant<Disc, Poly>;

double polygon_area(const std::vector<Vec2>& verts);
Vec2 polygon_centroid(const std::vector<Vec2>& verts);
bool polygon_is_convex_ccw(const std::vector<Vec2>& verts);

bool contains(const Footprint& f, const Vec2& p);
Vec2 centroid(const Footprint& f);

// Interval [lo, hi] of (q - origin) . axis over the footprint; axis is unit.
void project_extent(const Footprint& f, const Vec2& origin, const Vec2& axis,
                    double& lo, double& hi);

// Depth of the deepest point of segment [a, b] inside the footprint
// (distance from that point to the footprint boundary); 0 if disjoint.
double segment_penetration(const Footprint& f, const Vec2& a, const Vec2& b);

// Oriented box given by center, unit axis u (its first edge direction) and
// half extents along u and its perpendicular.
struct ObB {
  Vec2 center;
  Vec2 u;
  double half_u = 0.0;
  double half_n = 0.0;
  std::vector<Vec2> corners() const;
};

// True when interiors overlap with positive area (touching does not count).
bool overlaps(const ObB& box, const Footprint& f);

// Minimal distance between two footprints; 0 when they intersect or touch.
double footprint_distance(const Footprint& a, const Footprint& b);

double distance_point_segment(const Vec2& p, const Vec2& a, const Vec2& b);

}  // namespace sg
