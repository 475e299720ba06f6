#pragma once

// Landmark-to-contour mask generation: template alignment, template discretization,
// ratio-preserving projection onto the landmark chords, and polygon rasterization.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "liplab/error.hpp"
#include "liplab/geometry.hpp"
#include "liplab/imagio.hpp"

namespace liplab::maskgen {

/// Closed polyline (last vertex connects back to the first) with N anchor vertices that
/// correspond one-to-one, in order, with the landmark schema.
struct TemplateContour {
  std::vector<Point2> vertices;
  std::vector<std::size_t> anchor_indices;
  std::vector<std::string> anchor_names;

  std::size_t anchor_count() const { return anchor_indices.size(); }
  Point2 anchor(std::size_t i) const { return vertices[anchor_indices[i]]; }

  void validate() const {
    if (anchor_indices.size() < 3) throw DataError("template needs at least 3 anchors");
    if (anchor_names.size() != anchor_indices.size()) throw DataError("template anchor names/indices mismatch");
    for (std::size_t i = 0; i < anchor_indices.size(); ++i) {
      if (anchor_indices[i] >= vertices.size()) throw DataError("template anchor index out of range");
      if (i > 0 && anchor_indices[i] <= anchor_indices[i - 1]) {
        throw DataError("template anchor indices must be strictly increasing");
      }
    }
  }

  TemplateContour transformed(const Similarity& s) const {
    TemplateContour out = *this;
    for (auto& v : out.vertices) v = s.apply(v);
    return out;
  }
};

/// Template file: LandmarkFile lines with an extra 0/1 `anchor` column.
inline TemplateContour read_template(const std::string& path) {
  TemplateContour t;
  std::set<std::string> seen;
  for (const auto& [number, line] : liplab::detail::content_lines(path)) {
    const auto f = liplab::detail::split_csv(line);
    const std::string where = path + ":" + std::to_string(number);
    if (f.size() != 4) throw DataError("expected name,x,y,anchor at " + where);
    if (!seen.insert(f[0]).second) throw DataError("duplicate vertex name '" + f[0] + "' at " + where);
    t.vertices.push_back({liplab::detail::parse_double(f[1], where), liplab::detail::parse_double(f[2], where)});
    if (f[3] == "1") {
      t.anchor_indices.push_back(t.vertices.size() - 1);
      t.anchor_names.push_back(f[0]);
    } else if (f[3] != "0") {
      throw DataError("anchor column must be 0 or 1 at " + where);
    }
  }
  t.validate();
  return t;
}

inline void write_template(const std::string& path, const TemplateContour& t) {
  t.validate();
  std::string out;
  std::size_t next_anchor = 0;
  for (std::size_t v = 0; v < t.vertices.size(); ++v) {
    const bool is_anchor = next_anchor < t.anchor_indices.size() && t.anchor_indices[next_anchor] == v;
    char fallback[16];
    std::snprintf(fallback, sizeof fallback, "v%03zu", v);
    out += (is_anchor ? t.anchor_names[next_anchor] : std::string(fallback)) + "," +
           liplab::detail::format_double(t.vertices[v].x) + "," + liplab::detail::format_double(t.vertices[v].y) +
           "," + (is_anchor ? "1" : "0") + "\n";
    if (is_anchor) ++next_anchor;
  }
  liplab::detail::write_file(path, out);
}

namespace detail {

inline void check_names(const TemplateContour& t, const LandmarkSet& landmarks) {
  if (landmarks.size() != t.anchor_count()) {
    throw DataError("landmark count " + std::to_string(landmarks.size()) + " does not match template anchor count " +
                    std::to_string(t.anchor_count()));
  }
  for (std::size_t i = 0; i < landmarks.size(); ++i) {
    if (!landmarks.names.empty() && !t.anchor_names[i].empty() && landmarks.names[i] != t.anchor_names[i]) {
      throw DataError("landmark '" + landmarks.names[i] + "' does not match template anchor '" + t.anchor_names[i] +
                      "'");
    }
  }
}

/// Largest distance of any point from the principal axis through the centroid.
inline double collinearity_spread(const std::vector<Point2>& pts) {
  Point2 c{};
  for (auto p : pts) c = c + p;
  c = (1.0 / static_cast<double>(pts.size())) * c;
  double sxx = 0, sxy = 0, syy = 0;
  for (auto p : pts) {
    const Point2 d = p - c;
    sxx += d.x * d.x;
    sxy += d.x * d.y;
    syy += d.y * d.y;
  }
  const double angle = 0.5 * std::atan2(2.0 * sxy, sxx - syy);
  const Point2 dir{std::cos(angle), std::sin(angle)};
  double spread = 0.0;
  for (auto p : pts) spread = std::max(spread, std::abs(cross(dir, p - c)));
  return spread;
}

}  // namespace detail

struct Alignment {
  Similarity transform;
  double residual = 0.0;  ///< sum of squared anchor-to-landmark distances after alignment
  TemplateContour aligned;
};

/// Closed-form similarity (Procrustes) fit of the template anchors onto the landmarks.
inline Alignment align_template(const TemplateContour& tmpl, const LandmarkSet& landmarks) {
  tmpl.validate();
  detail::check_names(tmpl, landmarks);
  const std::size_t n = landmarks.size();
  if (detail::collinearity_spread(landmarks.points) <= 1e-9) throw DataError("degenerate landmarks: all collinear");

  using C = std::complex<double>;
  C t_mean{}, p_mean{};
  for (std::size_t i = 0; i < n; ++i) {
    t_mean += C(tmpl.anchor(i).x, tmpl.anchor(i).y);
    p_mean += C(landmarks.points[i].x, landmarks.points[i].y);
  }
  t_mean /= static_cast<double>(n);
  p_mean /= static_cast<double>(n);
  C num{};
  double den = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const C t = C(tmpl.anchor(i).x, tmpl.anchor(i).y) - t_mean;
    const C p = C(landmarks.points[i].x, landmarks.points[i].y) - p_mean;
    num += std::conj(t) * p;
    den += std::norm(t);
  }
  if (den <= 0.0) throw DataError("degenerate template: anchors coincide");
  const C z = num / den;
  const C offset = p_mean - z * t_mean;

  Alignment out;
  out.transform = {std::abs(z), std::arg(z), {offset.real(), offset.imag()}};
  out.aligned = tmpl.transformed(out.transform);
  for (std::size_t i = 0; i < n; ++i) {
    const Point2 d = out.aligned.anchor(i) - landmarks.points[i];
    out.residual += dot(d, d);
  }
  return out;
}

/// Vertices of the template arc running from anchor `i` to anchor `i+1` (wrapping at the end).
inline std::vector<Point2> anchor_arc(const TemplateContour& t, std::size_t i) {
  const std::size_t n = t.vertices.size();
  const std::size_t begin = t.anchor_indices[i];
  const std::size_t end = t.anchor_indices[(i + 1) % t.anchor_count()];
  std::vector<Point2> arc;
  for (std::size_t v = begin;; v = (v + 1) % n) {
    arc.push_back(t.vertices[v]);
    if (v == end && arc.size() > 1) break;
  }
  return arc;
}

inline double polyline_length(const std::vector<Point2>& line) {
  double len = 0.0;
  for (std::size_t k = 1; k < line.size(); ++k) len += distance(line[k - 1], line[k]);
  return len;
}

struct Projection {
  Point2 point;
  double arc_position = 0.0;  ///< arc length from the start of the polyline
  double distance = 0.0;
};

/// Nearest point on a polyline (segments included, not just vertices). Distances within 1e-9 count as a tie
/// and go to the earliest segment, so rounding noise cannot flip between two equidistant feet (a query on
/// the inner side of a bend has one on each adjacent segment).
inline Projection project_onto_polyline(const std::vector<Point2>& line, Point2 q) {
  constexpr double tie = 1e-9;
  Projection best{line.front(), 0.0, distance(q, line.front())};
  double walked = 0.0;
  for (std::size_t k = 1; k < line.size(); ++k) {
    const Point2 a = line[k - 1], d = line[k] - a;
    const double len2 = dot(d, d);
    const double len = std::sqrt(len2);
    const double u = len2 > 0.0 ? std::clamp(dot(q - a, d) / len2, 0.0, 1.0) : 0.0;
    const Point2 p = a + u * d;
    const double dist = distance(q, p);
    if (dist < best.distance - tie) best = {p, walked + u * len, dist};
    walked += len;
  }
  return best;
}

/// A discretized template point T'_j between anchors i and i+1.
struct TemplatePoint {
  Point2 point;
  std::size_t segment = 0;
  double a = 0.0;  ///< chord interpolation parameter that produced this point
};

/// Point of the template arc (anchor i to i+1) nearest to (1-a) T_i + a T_{i+1}.
inline Point2 template_point(const TemplateContour& t, std::size_t i, double a) {
  const Point2 q = lerp(t.anchor(i), t.anchor((i + 1) % t.anchor_count()), a);
  return project_onto_polyline(anchor_arc(t, i), q).point;
}

/// Interior template points along every anchor-to-anchor arc, roughly `spacing` apart, ordered along the
/// contour. Points that project onto an anchor are dropped.
inline std::vector<TemplatePoint> discretize_template(const TemplateContour& t, double spacing) {
  t.validate();
  if (!(spacing > 0.0)) throw UsageError("spacing must be positive");
  std::vector<TemplatePoint> out;
  const std::size_t n = t.anchor_count();
  for (std::size_t i = 0; i < n; ++i) {
    const auto arc = anchor_arc(t, i);
    const double length = polyline_length(arc);
    const auto steps = std::max<long>(1, std::lround(length / spacing));
    const Point2 from = t.anchor(i), to = t.anchor((i + 1) % n);
    std::vector<std::pair<double, TemplatePoint>> seg;
    for (long m = 1; m < steps; ++m) {
      const double a = static_cast<double>(m) / static_cast<double>(steps);
      const Projection pr = project_onto_polyline(arc, lerp(from, to, a));
      if (pr.arc_position <= 1e-9 || pr.arc_position >= length - 1e-9) continue;
      seg.push_back({pr.arc_position, {pr.point, i, a}});
    }
    std::stable_sort(seg.begin(), seg.end(), [](const auto& l, const auto& r) { return l.first < r.first; });
    for (auto& [pos, tp] : seg) out.push_back(tp);
  }
  return out;
}

struct ContourPoint {
  Point2 point;
  std::size_t segment = 0;  ///< landmark chord [P_i, P_{i+1}] this point belongs to
  double a = 0.0;           ///< position along that chord, A = (1-a) P_i + a P_{i+1}
  bool anatomical = false;
};

/// Landmarks interleaved with the interpolated points, in contour order.
struct DensifiedContour {
  std::vector<ContourPoint> points;

  std::vector<Point2> polygon() const {
    std::vector<Point2> out;
    out.reserve(points.size());
    for (const auto& p : points) out.push_back(p.point);
    return out;
  }
  std::size_t interpolated_count() const {
    return static_cast<std::size_t>(std::count_if(points.begin(), points.end(), [](auto& p) { return !p.anatomical; }));
  }
};

/// |T_i - T'| / |T_{i+1} - T'|.
inline double distance_ratio(Point2 from, Point2 to, Point2 p) { return distance(from, p) / distance(to, p); }

/// Places each template point on its landmark chord so the distance ratio to the chord ends equals the
/// ratio of the template point to its two anchors.
inline DensifiedContour project_to_landmarks(const LandmarkSet& landmarks, const TemplateContour& tmpl,
                                             const std::vector<TemplatePoint>& discretized) {
  detail::check_names(tmpl, landmarks);
  const std::size_t n = landmarks.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (distance(landmarks.points[i], landmarks.points[(i + 1) % n]) <= 1e-12) {
      throw DataError("zero-length landmark segment between '" + landmarks.names[i] + "' and '" +
                      landmarks.names[(i + 1) % n] + "'");
    }
  }
  DensifiedContour out;
  std::size_t next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    out.points.push_back({landmarks.points[i], i, 0.0, true});
    for (; next < discretized.size() && discretized[next].segment == i; ++next) {
      const TemplatePoint& tp = discretized[next];
      const double ratio = distance_ratio(tmpl.anchor(i), tmpl.anchor((i + 1) % n), tp.point);
      if (!std::isfinite(ratio)) throw DataError("template point coincides with an anchor");
      const double a = ratio / (1.0 + ratio);
      out.points.push_back({lerp(landmarks.points[i], landmarks.points[(i + 1) % n], a), i, a, false});
    }
    if (next < discretized.size() && discretized[next].segment < i) {
      throw DataError("discretized template points are not in contour order");
    }
  }
  if (next != discretized.size()) throw DataError("discretized template point has an invalid segment index");
  return out;
}

/// Align, discretize (spacing in landmark pixels) and project in one step.
inline DensifiedContour generate_contour(const LandmarkSet& landmarks, const TemplateContour& tmpl,
                                         double spacing = 2.0) {
  const Alignment al = align_template(tmpl, landmarks);
  return project_to_landmarks(landmarks, al.aligned, discretize_template(al.aligned, spacing));
}

inline double shoelace_area(const std::vector<Point2>& poly) {
  double twice = 0.0;
  for (std::size_t k = 0; k < poly.size(); ++k) twice += cross(poly[k], poly[(k + 1) % poly.size()]);
  return 0.5 * std::abs(twice);
}

namespace detail {

inline int orientation(Point2 a, Point2 b, Point2 c) {
  const double v = cross(b - a, c - a);
  const double scale = std::max({norm(b - a), norm(c - a), 1.0});
  if (std::abs(v) <= 1e-12 * scale * scale) return 0;
  return v > 0 ? 1 : -1;
}

inline bool on_segment(Point2 a, Point2 b, Point2 p) {
  return std::min(a.x, b.x) - 1e-12 <= p.x && p.x <= std::max(a.x, b.x) + 1e-12 &&
         std::min(a.y, b.y) - 1e-12 <= p.y && p.y <= std::max(a.y, b.y) + 1e-12;
}

inline bool segments_touch(Point2 a, Point2 b, Point2 c, Point2 d) {
  const int o1 = orientation(a, b, c), o2 = orientation(a, b, d);
  const int o3 = orientation(c, d, a), o4 = orientation(c, d, b);
  if (o1 != o2 && o3 != o4 && o1 != 0 && o2 != 0 && o3 != 0 && o4 != 0) return true;
  return (o1 == 0 && on_segment(a, b, c)) || (o2 == 0 && on_segment(a, b, d)) ||
         (o3 == 0 && on_segment(c, d, a)) || (o4 == 0 && on_segment(c, d, b));
}

inline std::vector<Point2> drop_repeats(const std::vector<Point2>& in) {
  std::vector<Point2> out;
  for (auto p : in) {
    if (out.empty() || distance(out.back(), p) > 1e-12) out.push_back(p);
  }
  while (out.size() > 1 && distance(out.front(), out.back()) <= 1e-12) out.pop_back();
  return out;
}

}  // namespace detail

/// Throws DataError naming the first pair of non-adjacent edges that touch or cross.
inline void check_simple_polygon(const std::vector<Point2>& poly) {
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool adjacent = j == i + 1 || (i == 0 && j == n - 1);
      if (adjacent) continue;
      if (detail::segments_touch(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n])) {
        throw DataError("self-intersecting contour: edge " + std::to_string(i) + " (" + std::to_string(i) + "->" +
                        std::to_string((i + 1) % n) + ") crosses edge " + std::to_string(j) + " (" +
                        std::to_string(j) + "->" + std::to_string((j + 1) % n) + ")");
      }
    }
  }
}

struct RasterResult {
  BinaryMask mask;
  std::vector<std::string> warnings;
};

/// Even-odd scanline fill of the closed polygon. A pixel is foreground iff its center (integer
/// coordinates) lies inside the polygon or on its boundary.
inline RasterResult rasterize_polygon(const std::vector<Point2>& input, int height, int width) {
  if (height <= 0 || width <= 0) throw UsageError("mask size must be positive");
  const std::vector<Point2> poly = detail::drop_repeats(input);
  if (poly.size() < 3) throw DataError("contour needs at least 3 distinct points");
  for (auto p : poly) {
    if (!(p.x >= 0.0 && p.x < width && p.y >= 0.0 && p.y < height)) {
      throw DataError("contour point (" + std::to_string(p.x) + ", " + std::to_string(p.y) + ") outside the " +
                      std::to_string(height) + "x" + std::to_string(width) + " canvas");
    }
  }
  RasterResult out{BinaryMask(height, width), {}};
  const std::size_t n = poly.size();
  const bool degenerate = detail::collinearity_spread(poly) <= 1e-9;
  if (degenerate) {
    out.warnings.push_back("degenerate contour: all points collinear, only the outline is drawn");
  } else {
    check_simple_polygon(poly);
    std::vector<double> xs;
    for (int y = 0; y < height; ++y) {
      xs.clear();
      for (std::size_t k = 0; k < n; ++k) {
        const Point2 a = poly[k], b = poly[(k + 1) % n];
        if ((a.y <= y && y < b.y) || (b.y <= y && y < a.y)) xs.push_back(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
      }
      std::sort(xs.begin(), xs.end());
      for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
        const int x0 = std::max(0, static_cast<int>(std::ceil(xs[k])));
        const int x1 = std::min(width - 1, static_cast<int>(std::floor(xs[k + 1])));
        for (int x = x0; x <= x1; ++x) out.mask.at(y, x) = 1;
      }
    }
  }
  // Centers lying exactly on an edge.
  constexpr double eps = 1e-9;
  for (std::size_t k = 0; k < n; ++k) {
    const Point2 a = poly[k], b = poly[(k + 1) % n];
    const int y0 = static_cast<int>(std::ceil(std::min(a.y, b.y) - eps));
    const int y1 = static_cast<int>(std::floor(std::max(a.y, b.y) + eps));
    for (int y = std::max(0, y0); y <= std::min(height - 1, y1); ++y) {
      if (std::abs(b.y - a.y) <= eps) {
        if (std::abs(y - a.y) > eps) continue;
        const int x0 = static_cast<int>(std::ceil(std::min(a.x, b.x) - eps));
        const int x1 = static_cast<int>(std::floor(std::max(a.x, b.x) + eps));
        for (int x = std::max(0, x0); x <= std::min(width - 1, x1); ++x) out.mask.at(y, x) = 1;
      } else {
        const double x = a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y);
        const double r = std::round(x);
        if (std::abs(x - r) <= eps && r >= 0 && r < width) out.mask.at(y, static_cast<int>(r)) = 1;
      }
    }
  }
  return out;
}

inline RasterResult rasterize(const DensifiedContour& contour, int height, int width) {
  return rasterize_polygon(contour.polygon(), height, width);
}

/// Landmarks -> contour -> mask.
inline RasterResult generate_mask(const LandmarkSet& landmarks, const TemplateContour& tmpl, int height, int width,
                                  double spacing = 2.0) {
  return rasterize(generate_contour(landmarks, tmpl, spacing), height, width);
}

/// Number of 4-connected foreground components.
inline int count_components(const BinaryMask& m) {
  std::vector<int> label(m.bits.size(), 0);
  int components = 0;
  std::vector<std::size_t> stack;
  for (std::size_t s = 0; s < m.bits.size(); ++s) {
    if (!m.bits[s] || label[s]) continue;
    ++components;
    stack.push_back(s);
    label[s] = components;
    while (!stack.empty()) {
      const std::size_t k = stack.back();
      stack.pop_back();
      const int y = static_cast<int>(k / m.width), x = static_cast<int>(k % m.width);
      const int nb[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
      for (auto& q : nb) {
        if (q[0] < 0 || q[0] >= m.height || q[1] < 0 || q[1] >= m.width) continue;
        const std::size_t kk = static_cast<std::size_t>(q[0]) * m.width + q[1];
        if (m.bits[kk] && !label[kk]) {
          label[kk] = components;
          stack.push_back(kk);
        }
      }
    }
  }
  return components;
}

}  // namespace liplab::maskgen
