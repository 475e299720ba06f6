#pragma once

// Synthetic upper-lip images with exact landmarks and masks, plus the training augmentations.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "liplab/error.hpp"
#include "liplab/geometry.hpp"
#include "liplab/imagio.hpp"
#include "liplab/maskgen.hpp"
#include "liplab/nn/tensor.hpp"

namespace liplab::synth {

/// Anchor names in contour order: along the upper vermilion edge from the image-left corner,
/// then back along the lower edge of the upper lip.
inline const std::array<std::string, 10> kAnchorNames{"ch_l", "up_l", "cph_l", "ls", "cph_r",
                                                       "up_r", "ch_r", "lo_r", "sto", "lo_l"};

struct Rgb {
  double r = 0, g = 0, b = 0;
  double gray() const { return 0.299 * r + 0.587 * g + 0.114 * b; }
};

struct LipShapeParams {
  Point2 center{31.5, 34.0};  ///< midpoint of the lower edge at the corner line
  double half_width = 19.0;   ///< corner-to-center distance
  double height = 9.0;        ///< crista philtri height above the corners
  double bow_depth = 2.5;     ///< labiale superius dip below the crista philtri
  double peak = 0.32;         ///< crista philtri offset as a fraction of half_width
  double droop = 2.0;         ///< corners below the center of the lower edge
  double sag = 1.0;           ///< lower edge bulge at the stomion
  double bulge = 0.005;       ///< outward arc bulge per unit chord length
  double tilt = 0.0;          ///< radians
  Rgb skin{205, 160, 130};
  Rgb lip{175, 95, 95};
  double noise_sigma = 3.0;
  double shading = 0.06;  ///< peak relative brightness change across the canvas
  std::uint64_t seed = 1;

  void validate() const {
    if (!(half_width > 0 && height > 0 && bow_depth >= 0 && bow_depth < height && peak > 0 && peak < 1 &&
          sag >= 0 && bulge >= 0 && noise_sigma >= 0)) {
      throw UsageError("invalid lip shape parameters");
    }
    if (std::abs(skin.gray() - lip.gray()) < 10.0) throw UsageError("skin and lip tones must differ by >= 10 gray levels");
  }
};

/// The canonical shape the shipped template is traced from.
inline LipShapeParams canonical_params() {
  LipShapeParams p;
  p.bulge = 0.005;
  return p;
}

inline std::vector<Point2> anchor_points(const LipShapeParams& p) {
  const double a = p.half_width, h = p.height, q = p.droop, s = p.peak;
  const double mid = (1.0 + s) / 2.0;
  const Point2 c = p.center;
  std::vector<Point2> raw{
      {-a, q},
      {-a * mid, q * mid * mid - 0.72 * h},
      {-a * s, q * s * s - h},
      {0.0, -h + p.bow_depth},
      {a * s, q * s * s - h},
      {a * mid, q * mid * mid - 0.72 * h},
      {a, q},
      {a * 0.5, 0.25 * q + 0.75 * p.sag},
      {0.0, p.sag},
      {-a * 0.5, 0.25 * q + 0.75 * p.sag},
  };
  const Similarity place{1.0, p.tilt, c};
  for (auto& v : raw) v = place.apply(v);
  return raw;
}

/// Closed contour: each anchor-to-anchor span is a cubic Bezier bulging outward by `bulge` x chord length.
/// Returns the vertices and the index of every anchor among them.
inline std::pair<std::vector<Point2>, std::vector<std::size_t>> exact_contour(const LipShapeParams& p,
                                                                             int steps_per_span = 16) {
  const auto anchors = anchor_points(p);
  const std::size_t n = anchors.size();
  double twice_area = 0.0;
  for (std::size_t i = 0; i < n; ++i) twice_area += cross(anchors[i], anchors[(i + 1) % n]);
  const double outward = twice_area > 0 ? -1.0 : 1.0;  // sign of the left normal that points out
  std::vector<Point2> verts;
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < n; ++i) {
    const Point2 a = anchors[i], b = anchors[(i + 1) % n];
    const Point2 d = b - a;
    const Point2 normal = outward * Point2{-d.y, d.x};  // |normal| = chord length
    const Point2 c1 = lerp(a, b, 1.0 / 3.0) + p.bulge * normal;
    const Point2 c2 = lerp(a, b, 2.0 / 3.0) + p.bulge * normal;
    idx.push_back(verts.size());
    for (int k = 0; k < steps_per_span; ++k) {
      const double t = static_cast<double>(k) / steps_per_span, u = 1.0 - t;
      verts.push_back(u * u * u * a + 3 * u * u * t * c1 + 3 * u * t * t * c2 + t * t * t * b);
    }
  }
  return {verts, idx};
}

inline maskgen::TemplateContour canonical_template(int steps_per_span = 24) {
  auto [verts, idx] = exact_contour(canonical_params(), steps_per_span);
  maskgen::TemplateContour t;
  t.vertices = std::move(verts);
  t.anchor_indices = std::move(idx);
  t.anchor_names.assign(kAnchorNames.begin(), kAnchorNames.end());
  return t;
}

namespace detail {

inline LipShapeParams draw_params(std::uint64_t seed, std::uint64_t attempt, int height, int width) {
  nn::Rng rng(seed * 0x9E3779B97F4A7C15ull + 0x2545F4914F6CDD1Dull + attempt * 0xD1B54A32D192ED03ull);
  const double k = std::min(height, width) / 64.0;
  LipShapeParams p;
  p.seed = seed;
  p.center = {(width - 1) / 2.0 + k * rng.uniform(-3, 3), height * 0.53 + k * rng.uniform(-3, 3)};
  p.half_width = k * rng.uniform(15, 21);
  p.height = k * rng.uniform(7, 11);
  p.bow_depth = k * rng.uniform(1.0, 3.0);
  p.peak = rng.uniform(0.25, 0.38);
  p.droop = k * rng.uniform(0.0, 1.5);
  p.sag = k * rng.uniform(1.5, 3.0);
  p.bulge = rng.uniform(0.0, 0.01);
  p.tilt = rng.uniform(-4, 4) * std::numbers::pi / 180.0;
  p.skin = {rng.uniform(170, 235), rng.uniform(125, 180), rng.uniform(95, 150)};
  p.lip = {p.skin.r - rng.uniform(10, 40), p.skin.g - rng.uniform(40, 70), p.skin.b - rng.uniform(20, 45)};
  p.noise_sigma = rng.uniform(2.0, 5.0);
  p.shading = rng.uniform(0.02, 0.08);
  return p;
}

/// `p` rotated by `degrees` about `mid`.
inline Point2 rotate_point(Point2 p, Point2 mid, double degrees) {
  const double t = degrees * std::numbers::pi / 180.0, c = std::cos(t), sn = std::sin(t);
  const double dx = p.x - mid.x, dy = p.y - mid.y;
  return {c * dx - sn * dy + mid.x, sn * dx + c * dy + mid.y};
}

/// Mask rotated about its center with nearest-neighbour resampling; pixels mapped from outside are background.
inline BinaryMask rotate_mask(const BinaryMask& m, double degrees) {
  const Point2 mid{(m.width - 1) / 2.0, (m.height - 1) / 2.0};
  BinaryMask out(m.height, m.width);
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      const Point2 src = rotate_point({static_cast<double>(x), static_cast<double>(y)}, mid, -degrees);
      const int mx = static_cast<int>(std::lround(src.x)), my = static_cast<int>(std::lround(src.y));
      out.at(y, x) = (mx >= 0 && mx < m.width && my >= 0 && my < m.height) ? m.at(my, mx) : 0;
    }
  }
  return out;
}

/// Distance from `p` to the outline of the foreground drawn as unit pixel squares.
inline double distance_to_outline(const BinaryMask& m, Point2 p) {
  auto fg = [&](int y, int x) { return y >= 0 && x >= 0 && y < m.height && x < m.width && m.at(y, x); };
  double best = std::numeric_limits<double>::infinity();
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      if (!m.at(y, x)) continue;
      if (!fg(y, x - 1)) best = std::min(best, distance(p, {x - 0.5, std::clamp(p.y, y - 0.5, y + 0.5)}));
      if (!fg(y, x + 1)) best = std::min(best, distance(p, {x + 0.5, std::clamp(p.y, y - 0.5, y + 0.5)}));
      if (!fg(y - 1, x)) best = std::min(best, distance(p, {std::clamp(p.x, x - 0.5, x + 0.5), y - 0.5}));
      if (!fg(y + 1, x)) best = std::min(best, distance(p, {std::clamp(p.x, x - 0.5, x + 0.5), y + 0.5}));
    }
  }
  return best;
}

inline constexpr double kRotations[] = {5.0, -5.0};

/// True when the shape fits the canvas, its exact mask and the mask rebuilt from its anchors through the
/// template are each one 4-connected component, and every anchor lies within 1 px of the mask outline both
/// as drawn and after each supported rotation (hflip mirrors exactly). Commissure wedges thinner than a pixel
/// can isolate or drop their tip pixel; such draws are rejected.
inline bool well_formed(const LipShapeParams& p, int height, int width) {
  static const maskgen::TemplateContour tmpl = canonical_template();
  const auto [verts, idx] = exact_contour(p);
  for (const auto& v : verts) {
    if (v.x < 0 || v.y < 0 || v.x > width - 1 || v.y > height - 1) return false;
  }
  const BinaryMask mask = maskgen::rasterize_polygon(verts, height, width).mask;
  if (maskgen::count_components(mask) != 1) return false;
  LandmarkSet lm;
  for (std::size_t i = 0; i < idx.size(); ++i) lm.push_back(kAnchorNames[i], verts[idx[i]]);
  const auto rebuilt = maskgen::generate_mask(lm, tmpl, height, width);
  if (!rebuilt.warnings.empty() || maskgen::count_components(rebuilt.mask) != 1) return false;
  const Point2 mid{(width - 1) / 2.0, (height - 1) / 2.0};
  for (std::size_t i : idx) {
    if (distance_to_outline(mask, verts[i]) > 1.0) return false;
  }
  for (double deg : kRotations) {
    const BinaryMask turned = rotate_mask(mask, deg);
    for (std::size_t i : idx) {
      if (distance_to_outline(turned, rotate_point(verts[i], mid, deg)) > 1.0) return false;
    }
  }
  return true;
}

}  // namespace detail

/// Randomized parameters for a `height` x `width` canvas; deterministic in `seed`.
inline LipShapeParams random_params(std::uint64_t seed, int height = 64, int width = 64) {
  constexpr int kAttempts = 64;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    const LipShapeParams p = detail::draw_params(seed, attempt, height, width);
    if (detail::well_formed(p, height, width)) return p;
  }
  throw DataError("no well-formed lip shape for a " + std::to_string(height) + "x" + std::to_string(width) +
                  " canvas after " + std::to_string(kAttempts) + " draws");
}

struct Sample {
  ByteImage rgb;
  LandmarkSet landmarks;
  BinaryMask mask;
};

/// Renders one triple. The mask is the rasterized generating contour; the image colors pixels by that mask.
inline Sample generate(const LipShapeParams& p, int height = 64, int width = 64) {
  p.validate();
  const auto [verts, idx] = exact_contour(p);
  for (const auto& v : verts) {
    if (v.x < 0 || v.y < 0 || v.x > width - 1 || v.y > height - 1) {
      throw DataError("lip geometry exceeds the " + std::to_string(height) + "x" + std::to_string(width) + " canvas");
    }
  }
  Sample s;
  s.mask = maskgen::rasterize_polygon(verts, height, width).mask;
  for (std::size_t i = 0; i < idx.size(); ++i) s.landmarks.push_back(kAnchorNames[i], verts[idx[i]]);

  nn::Rng rng(p.seed);
  s.rgb = ByteImage(height, width, 3);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double gx = (x - (width - 1) / 2.0) / width, gy = (y - (height - 1) / 2.0) / height;
      const double shade = 1.0 + p.shading * (gx + gy);
      const Rgb& tone = s.mask.at(y, x) ? p.lip : p.skin;
      const double rgb[3] = {tone.r, tone.g, tone.b};
      for (int c = 0; c < 3; ++c) {
        const double v = rgb[c] * shade + p.noise_sigma * rng.normal();
        s.rgb.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0));
      }
    }
  }
  return s;
}

/// `n` samples with seeds seed, seed+1, ...
inline std::vector<Sample> generate_set(int n, std::uint64_t seed, int height = 64, int width = 64) {
  if (n < 1) throw UsageError("n must be >= 1");
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) out.push_back(generate(random_params(seed + i, height, width), height, width));
  return out;
}

// ---------------------------------------------------------------------------------------------
// Augmentation

enum class OpKind { hflip, rotate, brightness };

struct AugmentOp {
  OpKind kind = OpKind::hflip;
  double value = 0.0;  ///< degrees for rotate, factor for brightness
};

/// Accepts hflip, rotate:5, rotate:-5, brightness:0.8, brightness:1.1.
inline AugmentOp parse_op(const std::string& token) {
  if (token == "hflip") return {OpKind::hflip, 0.0};
  if (token == "rotate:5" || token == "rotate:+5") return {OpKind::rotate, 5.0};
  if (token == "rotate:-5") return {OpKind::rotate, -5.0};
  if (token == "brightness:0.8") return {OpKind::brightness, 0.8};
  if (token == "brightness:1.1") return {OpKind::brightness, 1.1};
  throw UsageError("unsupported augmentation '" + token + "'");
}

inline std::string mirror_name(const std::string& name) {
  if (name.size() > 2 && name.ends_with("_l")) return name.substr(0, name.size() - 2) + "_r";
  if (name.size() > 2 && name.ends_with("_r")) return name.substr(0, name.size() - 2) + "_l";
  return name;
}

inline Sample hflip(const Sample& s) {
  Sample out = s;
  const int w = s.rgb.width;
  for (int y = 0; y < s.rgb.height; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < s.rgb.channels; ++c) out.rgb.at(y, x, c) = s.rgb.at(y, w - 1 - x, c);
  for (int y = 0; y < s.mask.height; ++y)
    for (int x = 0; x < s.mask.width; ++x) out.mask.at(y, x) = s.mask.at(y, s.mask.width - 1 - x);
  // Mirrored point of `ch_r` becomes the new `ch_l`, keeping the original name order.
  for (std::size_t i = 0; i < s.landmarks.size(); ++i) {
    const std::string partner = mirror_name(s.landmarks.names[i]);
    const auto it = std::find(s.landmarks.names.begin(), s.landmarks.names.end(), partner);
    if (it == s.landmarks.names.end()) throw DataError("landmark '" + partner + "' missing for the mirror of '" +
                                                       s.landmarks.names[i] + "'");
    const Point2 src = s.landmarks.points[static_cast<std::size_t>(it - s.landmarks.names.begin())];
    out.landmarks.points[i] = {(w - 1) - src.x, src.y};
  }
  return out;
}

/// Rotation by `degrees` about the canvas center: bilinear for the image, nearest for the mask.
inline Sample rotate(const Sample& s, double degrees) {
  const Point2 mid{(s.rgb.width - 1) / 2.0, (s.rgb.height - 1) / 2.0};
  Sample out = s;
  const int h = s.rgb.height, w = s.rgb.width;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Point2 src = detail::rotate_point({static_cast<double>(x), static_cast<double>(y)}, mid, -degrees);
      const double cx = std::clamp(src.x, 0.0, w - 1.0), cy = std::clamp(src.y, 0.0, h - 1.0);
      const int x0 = static_cast<int>(std::floor(cx)), y0 = static_cast<int>(std::floor(cy));
      const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      const double fx = cx - x0, fy = cy - y0;
      for (int ch = 0; ch < s.rgb.channels; ++ch) {
        const double v = (1 - fx) * (1 - fy) * s.rgb.at(y0, x0, ch) + fx * (1 - fy) * s.rgb.at(y0, x1, ch) +
                         (1 - fx) * fy * s.rgb.at(y1, x0, ch) + fx * fy * s.rgb.at(y1, x1, ch);
        out.rgb.at(y, x, ch) = static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0));
      }
    }
  }
  out.mask = detail::rotate_mask(s.mask, degrees);
  for (auto& p : out.landmarks.points) p = detail::rotate_point(p, mid, degrees);
  return out;
}

inline Sample brightness(const Sample& s, double factor) {
  Sample out = s;
  for (auto& v : out.rgb.data) v = static_cast<std::uint8_t>(std::clamp(std::round(v * factor), 0.0, 255.0));
  return out;
}

inline Sample augment(const Sample& s, const std::vector<AugmentOp>& ops) {
  Sample out = s;
  for (const auto& op : ops) {
    switch (op.kind) {
      case OpKind::hflip: out = hflip(out); break;
      case OpKind::rotate: out = rotate(out, op.value); break;
      case OpKind::brightness: out = brightness(out, op.value); break;
    }
  }
  return out;
}

inline Sample augment(const Sample& s, const std::vector<std::string>& tokens) {
  std::vector<AugmentOp> ops;
  for (const auto& t : tokens) ops.push_back(parse_op(t));
  return augment(s, ops);
}

/// One copy per single-op variant, used to enlarge small training sets.
inline const std::vector<std::string> kTrainingAugmentations{"hflip", "rotate:5", "rotate:-5", "brightness:0.8",
                                                             "brightness:1.1"};

/// Each sample followed by its variants under `tokens` (one op per variant).
inline std::vector<Sample> with_augmentations(const std::vector<Sample>& set, const std::vector<std::string>& tokens) {
  std::vector<AugmentOp> ops;
  for (const auto& t : tokens) ops.push_back(parse_op(t));
  std::vector<Sample> out;
  out.reserve(set.size() * (ops.size() + 1));
  for (const auto& s : set) {
    out.push_back(s);
    for (const auto& op : ops) out.push_back(augment(s, std::vector<AugmentOp>{op}));
  }
  return out;
}

// ---------------------------------------------------------------------------------------------
// On-disk dataset: NNNN.ppm, NNNN.landmarks.csv, NNNN.mask.pgm

inline std::string sample_stem(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", index);
  return buf;
}

inline void write_sample(const std::string& dir, int index, const Sample& s) {
  std::filesystem::create_directories(dir);
  const auto base = (std::filesystem::path(dir) / sample_stem(index)).string();
  write_ppm(base + ".ppm", s.rgb);
  write_landmarks(base + ".landmarks.csv", s.landmarks);
  write_mask(base + ".mask.pgm", s.mask);
}

/// Image/mask pairs found in `dir` (every `X.ppm` with a matching `X.mask.pgm`), sorted by name.
inline std::vector<std::pair<std::string, std::pair<ByteImage, BinaryMask>>> read_labeled_dir(const std::string& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("not a directory: '" + dir + "'");
  std::vector<std::string> stems;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.path().extension() == ".ppm") stems.push_back(e.path().stem().string());
  }
  std::sort(stems.begin(), stems.end());
  std::vector<std::pair<std::string, std::pair<ByteImage, BinaryMask>>> out;
  for (const auto& stem : stems) {
    const auto base = std::filesystem::path(dir) / stem;
    const std::string mask_path = base.string() + ".mask.pgm";
    if (!std::filesystem::exists(mask_path)) throw DataError("missing mask '" + mask_path + "'");
    ByteImage rgb = read_ppm(base.string() + ".ppm");
    BinaryMask mask = read_mask(mask_path);
    if (mask.height != rgb.height || mask.width != rgb.width) {
      throw ShapeError("mask '" + mask_path + "' does not match its image size");
    }
    out.push_back({stem, {std::move(rgb), std::move(mask)}});
  }
  if (out.empty()) throw DataError("no .ppm images in '" + dir + "'");
  return out;
}

}  // namespace liplab::synth
