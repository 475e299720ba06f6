#pragma once

// Local binary patterns, gradient-weighted LBP and the 5-plane network input.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "liplab/error.hpp"
#include "liplab/imagio.hpp"

namespace liplab::texture {

enum class Sampling { nearest, bilinear };

struct LbpParams {
  int neighbors = 8;
  double radius = 1.0;
  Sampling sampling = Sampling::bilinear;

  void validate() const {
    if (neighbors < 4 || neighbors > 24) throw UsageError("LBP neighbors must be in [4, 24]");
    if (!(radius >= 1.0)) throw UsageError("LBP radius must be >= 1");
  }
  /// Largest possible code, 2^P - 1.
  double max_code() const { return std::ldexp(1.0, neighbors) - 1.0; }
};

/// Offset of neighbor i (1-based) from the center. Offsets within 1e-9 of an integer are snapped to it,
/// so axis-aligned neighbors land exactly on pixel centers.
inline Point2 neighbor_offset(const LbpParams& p, int i) {
  const double angle = 2.0 * std::numbers::pi * i / p.neighbors;
  auto snap = [](double v) {
    const double r = std::round(v);
    return std::abs(v - r) < 1e-9 ? r : v;
  };
  return {snap(p.radius * std::cos(angle)), snap(p.radius * std::sin(angle))};
}

/// A precomputed sampling stencil: integer base offset plus fractional weights.
struct SampleTap {
  int dx0 = 0;
  int dy0 = 0;
  double fx = 0.0;
  double fy = 0.0;
};

inline SampleTap make_tap(Point2 offset, Sampling sampling) {
  SampleTap t;
  if (sampling == Sampling::nearest) {
    t.dx0 = static_cast<int>(std::lround(offset.x));
    t.dy0 = static_cast<int>(std::lround(offset.y));
    return t;
  }
  const double bx = std::floor(offset.x), by = std::floor(offset.y);
  t.dx0 = static_cast<int>(bx);
  t.dy0 = static_cast<int>(by);
  t.fx = offset.x - bx;
  t.fy = offset.y - by;
  return t;
}

/// Samples plane `v` (1 channel) at (x + tap) with clamp-to-edge. Written as corner value plus weighted
/// differences so that a flat neighborhood reproduces its value exactly.
inline double sample(const FloatImage& v, int x, int y, const SampleTap& t) {
  const int w = v.width, h = v.height;
  auto px = [&](int xx, int yy) -> double {
    return v.data[static_cast<std::size_t>(std::clamp(yy, 0, h - 1)) * w + std::clamp(xx, 0, w - 1)];
  };
  const int x0 = x + t.dx0, y0 = y + t.dy0;
  const double a = px(x0, y0);
  if (t.fx == 0.0 && t.fy == 0.0) return a;
  const double b = px(x0 + 1, y0);
  const double c = px(x0, y0 + 1);
  const double d = px(x0 + 1, y0 + 1);
  return a + t.fx * (b - a) + t.fy * (c - a) + t.fx * t.fy * (a - b - c + d);
}

namespace detail {

inline void check_gray(const FloatImage& gray, const LbpParams& p) {
  if (gray.channels != 1) throw ShapeError("expected a 1-channel image, got " + std::to_string(gray.channels));
  p.validate();
  const int need = 2 * static_cast<int>(std::ceil(p.radius)) + 1;
  if (gray.height < need || gray.width < need) {
    throw ShapeError("image smaller than the (2R+1)^2 LBP support");
  }
}

inline std::vector<SampleTap> taps(const LbpParams& p) {
  std::vector<SampleTap> out;
  for (int i = 1; i <= p.neighbors; ++i) out.push_back(make_tap(neighbor_offset(p, i), p.sampling));
  return out;
}

}  // namespace detail

/// Per-pixel LBP code sum_i 2^(i-1) H(I(g_i) - I(g_c)), with H(0) = 1.
inline FloatImage lbp(const FloatImage& gray, const LbpParams& params = {}) {
  detail::check_gray(gray, params);
  const auto tap = detail::taps(params);
  FloatImage out(gray.height, gray.width, 1);
  for (int y = 0; y < gray.height; ++y) {
    for (int x = 0; x < gray.width; ++x) {
      const double center = gray.data[static_cast<std::size_t>(y) * gray.width + x];
      std::uint32_t code = 0;
      for (int i = 0; i < params.neighbors; ++i) {
        if (sample(gray, x, y, tap[i]) - center >= 0.0) code |= 1u << i;
      }
      out.data[static_cast<std::size_t>(y) * gray.width + x] = static_cast<float>(code);
    }
  }
  return out;
}

/// Sobel derivatives and the normalized product field gc = gx*gy / max|gx*gy|.
struct GradientField {
  FloatImage gx;
  FloatImage gy;
  FloatImage gc;
};

inline GradientField gradients(const FloatImage& gray) {
  if (gray.channels != 1) throw ShapeError("gradients need a 1-channel image");
  const int h = gray.height, w = gray.width;
  GradientField f{FloatImage(h, w, 1), FloatImage(h, w, 1), FloatImage(h, w, 1)};
  auto px = [&](int x, int y) -> double {
    return gray.data[static_cast<std::size_t>(std::clamp(y, 0, h - 1)) * w + std::clamp(x, 0, w - 1)];
  };
  std::vector<double> product(static_cast<std::size_t>(h) * w);
  double peak = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double gx = (px(x + 1, y - 1) + 2.0 * px(x + 1, y) + px(x + 1, y + 1)) -
                        (px(x - 1, y - 1) + 2.0 * px(x - 1, y) + px(x - 1, y + 1));
      const double gy = (px(x - 1, y + 1) + 2.0 * px(x, y + 1) + px(x + 1, y + 1)) -
                        (px(x - 1, y - 1) + 2.0 * px(x, y - 1) + px(x + 1, y - 1));
      const std::size_t k = static_cast<std::size_t>(y) * w + x;
      f.gx.data[k] = static_cast<float>(gx);
      f.gy.data[k] = static_cast<float>(gy);
      product[k] = gx * gy;
      peak = std::max(peak, std::abs(product[k]));
    }
  }
  if (peak > 0.0) {
    for (std::size_t k = 0; k < product.size(); ++k) f.gc.data[k] = static_cast<float>(product[k] / peak);
  }
  return f;
}

/// Gradient-weighted LBP: sum_i |2^(i-1) H(I(g_i) - I(g_c)) gc(x_i, y_i)|, gc sampled like the intensities.
inline FloatImage glbp(const FloatImage& gray, const LbpParams& params, const GradientField& field) {
  detail::check_gray(gray, params);
  if (field.gc.height != gray.height || field.gc.width != gray.width || field.gc.channels != 1) {
    throw ShapeError("gradient field does not match the image dimensions");
  }
  const auto tap = detail::taps(params);
  FloatImage out(gray.height, gray.width, 1);
  for (int y = 0; y < gray.height; ++y) {
    for (int x = 0; x < gray.width; ++x) {
      const double center = gray.data[static_cast<std::size_t>(y) * gray.width + x];
      double acc = 0.0;
      for (int i = 0; i < params.neighbors; ++i) {
        if (sample(gray, x, y, tap[i]) - center >= 0.0) {
          acc += std::abs(std::ldexp(sample(field.gc, x, y, tap[i]), i));
        }
      }
      out.data[static_cast<std::size_t>(y) * gray.width + x] = static_cast<float>(acc);
    }
  }
  return out;
}

inline constexpr int kInputPlanes = 5;

/// H x W x 5 planes (R, G, B, LBP, GLBP), each scaled into [0,1].
/// RGB / 255, LBP / (2^P - 1), GLBP min-max per image (a constant plane maps to zero).
template <class Pixel>
FloatImage build_input(const Image<Pixel>& rgb, const LbpParams& params = {}) {
  if (rgb.channels != 3) throw ShapeError("build_input needs an RGB image");
  const FloatImage gray = to_grayscale(rgb);
  const FloatImage codes = lbp(gray, params);
  const FloatImage weighted = glbp(gray, params, gradients(gray));
  const auto [lo_it, hi_it] = std::minmax_element(weighted.data.begin(), weighted.data.end());
  const double lo = *lo_it, span = *hi_it - *lo_it;
  const double code_scale = params.max_code();

  FloatImage out(rgb.height, rgb.width, kInputPlanes);
  for (std::size_t p = 0; p < rgb.pixel_count(); ++p) {
    float* dst = &out.data[p * kInputPlanes];
    for (int c = 0; c < 3; ++c) dst[c] = static_cast<float>(static_cast<double>(rgb.data[3 * p + c]) / 255.0);
    dst[3] = static_cast<float>(codes.data[p] / code_scale);
    dst[4] = span > 0.0 ? static_cast<float>((weighted.data[p] - lo) / span) : 0.0f;
  }
  return out;
}

/// One plane of a multi-channel image rescaled to bytes for inspection.
inline ByteImage plane_to_bytes(const FloatImage& img, int channel) {
  ByteImage out(img.height, img.width, 1);
  for (std::size_t p = 0; p < img.pixel_count(); ++p) {
    const double v = std::clamp(static_cast<double>(img.data[p * img.channels + channel]), 0.0, 1.0);
    out.data[p] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return out;
}

}  // namespace liplab::texture
