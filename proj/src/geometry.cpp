#include "servograsp/geometry.hpp"

#include <algorithm>
#include <limits>

namespace sg {

double polygon_area(const std::vector<Vec2>& verts) {
  double a = 0.0;
  size_t n = verts.size();
  for (size_t i = 0; i < n; ++i) {
    const Vec2& p = verts[i];
    const Vec2& q = verts[(i + 1) % n];
    a += p.cross(q);
  }
  return 0.5 * a;
}

Vec2 polygon_centroid(const std::vector<Vec2>& verts) {
  double a = 0.0;
  Vec2 c{0.0, 0.0};
  size_t n = verts.size();
  for (size_t i = 0; i < n; ++i) {
    const Vec2& p = verts[i];
    const Vec2& q = verts[(i + 1) % n];
    double w = p.cross(q);
    a += w;
    c.x += (p.x + q.x) * w;
    c.y += (p.y + q.y) * w;
  }
  if (std::abs(a) < 1e-18) return verts.empty() ? Vec2{} : verts[0];
  return {c.x / (3.0 * a), c.y / (3.0 * a)};
}

bool polygon_is_convex_ccw(const std::vector<Vec2>& verts) {
  size_t n = verts.size();
  if (n < 3) return false;
  if (polygon_area(verts) <= 0.0) return false;
  for (size_t i = 0; i < n; ++i) {
    Vec2 e1 = verts[(i + 1) % n] - verts[i];
    Vec2 e2 = verts[(i + 2) % n] - verts[(i + 1) % n];
    if (e1.cross(e2) < -1e-12) return false;
  }
  return true;
}

bool contains(const Footprint& f, const Vec2& p) {
  if (const Disc* d = std::get_if<Disc>(&f)) {
    return (p - d->center).norm() <= d->radius;
  }
  const Poly& poly = std::get<Poly>(f);
  size_t n = poly.verts.size();
  for (size_t i = 0; i < n; ++i) {
    Vec2 e = poly.verts[(i + 1) % n] - poly.verts[i];
    if (e.cross(p - poly.verts[i]) < 0.0) return false;
  }
  return true;
}

Vec2 centroid(const Footprint& f) {
  if (const Disc* d = std::get_if<Disc>(&f)) return d->center;
  return polygon_centroid(std::get<Poly>(f).verts);
}

void project_extent(const Footprint& f, const Vec2& origin, const Vec2& axis,
                    double& lo, double& hi) {
  if (const Disc* d = std::get_if<Disc>(&f)) {
    double c = (d->center - origin).dot(axis);
    lo = c - d->radius;
    hi = c + d->radius;
    return;
  }
  const Poly& poly = std::get<Poly>(f);
  lo = std::numeric_limits<double>::infinity();
  hi = -lo;
  for (const Vec2& v : poly.verts) {
    double t = (v - origin).dot(axis);
    lo = std::min(lo, t);
    hi = std::max(hi, t);
  }
}

double distance_point_segment(const Vec2& p, const Vec2& a, const Vec2& b) {
  Vec2 ab = b - a;
  double len2 = ab.dot(ab);
  if (len2 <= 0.0) return (p - a).norm();
  double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return (p - (a + ab * t)).norm();
}

namespace {

// Signed depth of p inside a convex CCW polygon: min over edges of the
// inward distance to the edge line. Positive inside, negative outside.
double signed_poly_depth(const std::vector<Vec2>& verts, const Vec2& p) {
  double depth = std::numeric_limits<double>::infinity();
  size_t n = verts.size();
  for (size_t i = 0; i < n; ++i) {
    Vec2 a = verts[i];
    Vec2 e = verts[(i + 1) % n] - a;
    double len = e.norm();
    if (len <= 0.0) continue;
    depth = std::min(depth, e.cross(p - a) / len);
  }
  return depth;
}

}  // namespace

double segment_penetration(const Footprint& f, const Vec2& a, const Vec2& b) {
  if (const Disc* d = std::get_if<Disc>(&f)) {
    double dist = distance_point_segment(d->center, a, b);
    return std::max(0.0, d->radius - dist);
  }
  const Poly& poly = std::get<Poly>(f);
  // g(t) = signed depth along the segment is concave (min of affine
  // functions), so ternary search finds its maximum.
  auto g = [&](double t) {
    return signed_poly_depth(poly.verts, a + (b - a) * t);
  };
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 80; ++it) {
    double m1 = lo + (hi - lo) / 3.0;
    double m2 = hi - (hi - lo) / 3.0;
    if (g(m1) < g(m2)) {
      lo = m1;
    } else {
      hi = m2;
    }
  }
  double best = std::max({g(lo), g(0.0), g(1.0)});
  return std::max(0.0, best);
}

std::vector<Vec2> ObB::corners() const {
  Vec2 n{-u.y, u.x};
  Vec2 eu = u * half_u;
  Vec2 en = n * half_n;
  return {center - eu - en, center + eu - en, center + eu + en,
          center - eu + en};
}

namespace {

void project_verts(const std::vector<Vec2>& verts, const Vec2& axis,
                   double& lo, double& hi) {
  lo = std::numeric_limits<double>::infinity();
  hi = -lo;
  for (const Vec2& v : verts) {
    double t = v.dot(axis);
    lo = std::min(lo, t);
    hi = std::max(hi, t);
  }
}

// SAT over the given axes; true when every axis sees positive overlap.
bool sat_overlap(const std::vector<Vec2>& a, const std::vector<Vec2>& b,
                 const std::vector<Vec2>& axes) {
  for (const Vec2& axis : axes) {
    double alo, ahi, blo, bhi;
    project_verts(a, axis, alo, ahi);
    project_verts(b, axis, blo, bhi);
    if (std::min(ahi, bhi) - std::max(alo, blo) <= 1e-12) return false;
  }
  return true;
}

std::vector<Vec2> edge_normals(const std::vector<Vec2>& verts) {
  std::vector<Vec2> axes;
  size_t n = verts.size();
  axes.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    Vec2 e = verts[(i + 1) % n] - verts[i];
    double len = e.norm();
    if (len > 0.0) axes.push_back({-e.y / len, e.x / len});
  }
  return axes;
}

}  // namespace

bool overlaps(const ObB& box, const Footprint& f) {
  std::vector<Vec2> bc = box.corners();
  if (const Disc* d = std::get_if<Disc>(&f)) {
    // Closest point on box to the disc center, in box coordinates.
    Vec2 n{-box.u.y, box.u.x};
    Vec2 rel = d->center - box.center;
    double pu = std::clamp(rel.dot(box.u), -box.half_u, box.half_u);
    double pn = std::clamp(rel.dot(n), -box.half_n, box.half_n);
    Vec2 closest = box.center + box.u * pu + n * pn;
    return (d->center - closest).norm() < d->radius - 1e-12;
  }
  const Poly& poly = std::get<Poly>(f);
  std::vector<Vec2> axes = edge_normals(poly.verts);
  Vec2 nrm{-box.u.y, box.u.x};
  axes.push_back(box.u);
  axes.push_back(nrm);
  return sat_overlap(bc, poly.verts, axes);
}

double footprint_distance(const Footprint& a, const Footprint& b) {
  const Disc* da = std::get_if<Disc>(&a);
  const Disc* db = std::get_if<Disc>(&b);
  if (da && db) {
    return std::max(0.0, (da->center - db->center).norm() - da->radius -
                             db->radius);
  }
  if (da || db) {
    const Disc& d = da ? *da : *db;
    const Poly& p = std::get<Poly>(da ? b : a);
    if (contains(Footprint{p}, d.center)) return 0.0;
    double best = std::numeric_limits<double>::infinity();
    size_t n = p.verts.size();
    for (size_t i = 0; i < n; ++i) {
      best = std::min(best, distance_point_segment(d.center, p.verts[i],
                                                   p.verts[(i + 1) % n]));
    }
    return std::max(0.0, best - d.radius);
  }
  const Poly& pa = std::get<Poly>(a);
  const Poly& pb = std::get<Poly>(b);
  std::vector<Vec2> axes = edge_normals(pa.verts);
  for (const Vec2& ax : edge_normals(pb.verts)) axes.push_back(ax);
  if (sat_overlap(pa.verts, pb.verts, axes)) return 0.0;
  double best = std::numeric_limits<double>::infinity();
  size_t na = pa.verts.size(), nb = pb.verts.size();
  for (size_t i = 0; i < na; ++i) {
    for (size_t j = 0; j < nb; ++j) {
      best = std::min(best,
                      distance_point_segment(pa.verts[i], pb.verts[j],
                                             pb.verts[(j + 1) % nb]));
      best = std::min(best,
                      distance_point_segment(pb.verts[j], pa.verts[i],
                                             pa.verts[(i + 1) % na]));
    }
  }
  return best;
}

}  // namespace sg
