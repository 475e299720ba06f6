#pragma once

// Differentiable layers. Every op takes graph handles and records its own backward.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "liplab/nn/graph.hpp"

namespace liplab::nn {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

/// Upper bound on im2col scratch elements; larger convolutions run in row bands.
inline constexpr std::size_t kColumnBudget = std::size_t{1} << 22;

struct ConvGeometry {
  int cin, cout, k, stride, pad, h, w, ho, wo;
  int rows() const { return cin * k * k; }
};

template <class T>
void im2col(const T* x, const ConvGeometry& g, int oy0, int oy1, T* cols) {
  const int span = (oy1 - oy0) * g.wo;
  for (int ci = 0; ci < g.cin; ++ci) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        T* row = cols + static_cast<std::size_t>((ci * g.k + ky) * g.k + kx) * span;
        for (int oy = oy0; oy < oy1; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          T* dst = row + static_cast<std::size_t>(oy - oy0) * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, T{});
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(ci) * g.h + iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T{};
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* cols, const ConvGeometry& g, int oy0, int oy1, T* dx) {
  const int span = (oy1 - oy0) * g.wo;
  for (int ci = 0; ci < g.cin; ++ci) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const T* row = cols + static_cast<std::size_t>((ci * g.k + ky) * g.k + kx) * span;
        for (int oy = oy0; oy < oy1; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          const T* src = row + static_cast<std::size_t>(oy - oy0) * g.wo;
          T* dst = dx + (static_cast<std::size_t>(ci) * g.h + iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

inline int band_rows(const ConvGeometry& g) {
  const std::size_t per_row = static_cast<std::size_t>(g.rows()) * g.wo;
  return static_cast<int>(std::clamp<std::size_t>(kColumnBudget / std::max<std::size_t>(per_row, 1), 1, g.ho));
}

template <class T>
void check_same_shape(const Graph<T>& g, Var a, Var b, const char* op) {
  if (!(g.shape(a) == g.shape(b))) {
    throw ShapeError(std::string(op) + ": shape mismatch " + g.shape(a).str() + " vs " + g.shape(b).str());
  }
}

}  // namespace detail

enum class Padding { same, valid };

struct ConvOptions {
  int stride = 1;
  Padding padding = Padding::same;
};

/// Cross-correlation. w: (cout, cin, k, k), b: (1, cout, 1, 1) or absent.
template <class T>
Var conv2d(Graph<T>& g, Var x, Var w, Var b = {}, ConvOptions opt = {}) {
  const Shape xs = g.shape(x), ws = g.shape(w);
  if (ws.c != xs.c) throw ShapeError("conv2d: input has " + std::to_string(xs.c) + " channels, kernel expects " +
                                     std::to_string(ws.c));
  if (ws.h != ws.w || ws.h % 2 == 0) throw ShapeError("conv2d: kernel must be square with odd size");
  if (b.valid() && g.shape(b).size() != static_cast<std::size_t>(ws.n)) throw ShapeError("conv2d: bias size");
  if (opt.stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  detail::ConvGeometry geo{xs.c, ws.n, ws.h, opt.stride, opt.padding == Padding::same ? ws.h / 2 : 0, xs.h, xs.w, 0, 0};
  geo.ho = (geo.h + 2 * geo.pad - geo.k) / geo.stride + 1;
  geo.wo = (geo.w + 2 * geo.pad - geo.k) / geo.stride + 1;
  if (geo.ho <= 0 || geo.wo <= 0) throw ShapeError("conv2d: input smaller than kernel");

  const bool direct = geo.k == 1 && geo.stride == 1;
  const int band = detail::band_rows(geo);
  Tensor<T> out(Shape{xs.n, geo.cout, geo.ho, geo.wo});
  const Tensor<T>& xv = g.value(x);
  const detail::ConstMatMap<T> wm(g.value(w).data.data(), geo.cout, geo.rows());
  std::vector<T> cols;
  for (int n = 0; n < xs.n; ++n) {
    T* y = out.item(n);
    if (direct) {
      detail::MatMap<T>(y, geo.cout, geo.ho * geo.wo).noalias() =
          wm * detail::ConstMatMap<T>(xv.item(n), geo.cin, geo.h * geo.w);
    } else {
      for (int oy0 = 0; oy0 < geo.ho; oy0 += band) {
        const int oy1 = std::min(geo.ho, oy0 + band), span = (oy1 - oy0) * geo.wo;
        cols.resize(static_cast<std::size_t>(geo.rows()) * span);
        detail::im2col(xv.item(n), geo, oy0, oy1, cols.data());
        const detail::ConstMatMap<T> cm(cols.data(), geo.rows(), span);
        // Output rows are strided by the full plane, so write through a temporary.
        const detail::RowMat<T> part = wm * cm;
        for (int co = 0; co < geo.cout; ++co) {
          std::copy_n(part.row(co).data(), span, y + static_cast<std::size_t>(co) * geo.ho * geo.wo + oy0 * geo.wo);
        }
      }
    }
    if (b.valid()) {
      const auto& bv = g.value(b).data;
      for (int co = 0; co < geo.cout; ++co) {
        T* plane = y + static_cast<std::size_t>(co) * geo.ho * geo.wo;
        for (int i = 0; i < geo.ho * geo.wo; ++i) plane[i] += bv[co];
      }
    }
  }

  return g.record("conv2d", std::move(out), {x, w, b}, [x, w, b, geo, direct, band](Graph<T>& g, const Tensor<T>& dy) {
    const Tensor<T>& xv = g.value(x);
    const int n_items = xv.shape.n, plane_out = geo.ho * geo.wo;
    const bool need_dx = g.requires_grad(x), need_dw = g.requires_grad(w);
    const detail::ConstMatMap<T> wm(g.value(w).data.data(), geo.cout, geo.rows());
    if (b.valid() && g.requires_grad(b)) {
      auto& db = g.grad(b).data;
      for (int n = 0; n < n_items; ++n) {
        for (int co = 0; co < geo.cout; ++co) {
          const T* plane = dy.item(n) + static_cast<std::size_t>(co) * plane_out;
          double s = 0.0;
          for (int i = 0; i < plane_out; ++i) s += plane[i];
          db[co] += static_cast<T>(s);
        }
      }
    }
    if (!need_dx && !need_dw) return;
    T* dx_base = need_dx ? g.grad(x).data.data() : nullptr;
    detail::MatMap<T> dwm(need_dw ? g.grad(w).data.data() : nullptr, geo.cout, geo.rows());
    std::vector<T> cols, dcols, dy_band;
    for (int n = 0; n < n_items; ++n) {
      const T* dyn = dy.item(n);
      if (direct) {
        const detail::ConstMatMap<T> dym(dyn, geo.cout, plane_out);
        if (need_dw) dwm.noalias() += dym * detail::ConstMatMap<T>(xv.item(n), geo.cin, plane_out).transpose();
        if (need_dx) {
          detail::MatMap<T>(dx_base + static_cast<std::size_t>(n) * geo.cin * plane_out, geo.cin, plane_out)
              .noalias() += wm.transpose() * dym;
        }
        continue;
      }
      for (int oy0 = 0; oy0 < geo.ho; oy0 += band) {
        const int oy1 = std::min(geo.ho, oy0 + band), span = (oy1 - oy0) * geo.wo;
        dy_band.resize(static_cast<std::size_t>(geo.cout) * span);
        for (int co = 0; co < geo.cout; ++co) {
          std::copy_n(dyn + static_cast<std::size_t>(co) * plane_out + oy0 * geo.wo, span,
                      dy_band.data() + static_cast<std::size_t>(co) * span);
        }
        const detail::ConstMatMap<T> dym(dy_band.data(), geo.cout, span);
        if (need_dw) {
          cols.resize(static_cast<std::size_t>(geo.rows()) * span);
          detail::im2col(xv.item(n), geo, oy0, oy1, cols.data());
          dwm.noalias() += dym * detail::ConstMatMap<T>(cols.data(), geo.rows(), span).transpose();
        }
        if (need_dx) {
          dcols.resize(static_cast<std::size_t>(geo.rows()) * span);
          detail::MatMap<T>(dcols.data(), geo.rows(), span).noalias() = wm.transpose() * dym;
          detail::col2im_add(dcols.data(), geo, oy0, oy1,
                             dx_base + static_cast<std::size_t>(n) * geo.cin * geo.h * geo.w);
        }
      }
    }
  });
}

/// Stride-2, 2x2 transposed convolution; doubles H and W. w: (cin, cout, 2, 2), b: (1, cout, 1, 1) or absent.
template <class T>
Var conv_transpose2(Graph<T>& g, Var x, Var w, Var b = {}) {
  const Shape xs = g.shape(x), ws = g.shape(w);
  if (ws.n != xs.c || ws.h != 2 || ws.w != 2) throw ShapeError("conv_transpose2: kernel must be (cin, cout, 2, 2)");
  const int cin = xs.c, cout = ws.c, hw = xs.h * xs.w;
  if (b.valid() && g.shape(b).size() != static_cast<std::size_t>(cout)) throw ShapeError("conv_transpose2: bias size");
  Tensor<T> out(Shape{xs.n, cout, 2 * xs.h, 2 * xs.w});
  const detail::ConstMatMap<T> wm(g.value(w).data.data(), cin, cout * 4);
  detail::RowMat<T> taps;
  for (int n = 0; n < xs.n; ++n) {
    taps.noalias() = wm.transpose() * detail::ConstMatMap<T>(g.value(x).item(n), cin, hw);
    for (int co = 0; co < cout; ++co) {
      const T bias = b.valid() ? g.value(b).data[co] : T{};
      for (int k = 0; k < 4; ++k) {
        const int ky = k / 2, kx = k % 2;
        const T* src = taps.row(co * 4 + k).data();
        for (int i = 0; i < xs.h; ++i) {
          for (int j = 0; j < xs.w; ++j) out.at(n, co, 2 * i + ky, 2 * j + kx) = src[i * xs.w + j] + bias;
        }
      }
    }
  }
  return g.record("conv_transpose2", std::move(out), {x, w, b}, [x, w, b, cin, cout, xs](Graph<T>& g, const Tensor<T>& dy) {
    const int hw = xs.h * xs.w;
    const detail::ConstMatMap<T> wm(g.value(w).data.data(), cin, cout * 4);
    detail::RowMat<T> dtaps(cout * 4, hw);
    for (int n = 0; n < xs.n; ++n) {
      for (int co = 0; co < cout; ++co) {
        for (int k = 0; k < 4; ++k) {
          const int ky = k / 2, kx = k % 2;
          T* dst = dtaps.row(co * 4 + k).data();
          for (int i = 0; i < xs.h; ++i) {
            for (int j = 0; j < xs.w; ++j) dst[i * xs.w + j] = dy.at(n, co, 2 * i + ky, 2 * j + kx);
          }
        }
      }
      if (b.valid() && g.requires_grad(b)) {
        auto& db = g.grad(b).data;
        for (int co = 0; co < cout; ++co) {
          double s = 0.0;
          for (int k = 0; k < 4; ++k) s += dtaps.row(co * 4 + k).template cast<double>().sum();
          db[co] += static_cast<T>(s);
        }
      }
      if (g.requires_grad(w)) {
        detail::MatMap<T>(g.grad(w).data.data(), cin, cout * 4).noalias() +=
            detail::ConstMatMap<T>(g.value(x).item(n), cin, hw) * dtaps.transpose();
      }
      if (g.requires_grad(x)) {
        detail::MatMap<T>(g.grad(x).item(n), cin, hw).noalias() += wm * dtaps;
      }
    }
  });
}

/// 2x2 / stride-2 max pooling; ties go to the first element in row-major order.
template <class T>
Var maxpool2(Graph<T>& g, Var x) {
  const Shape xs = g.shape(x);
  if (xs.h % 2 || xs.w % 2) throw ShapeError("maxpool2: spatial dims must be even, got " + xs.str());
  Tensor<T> out(Shape{xs.n, xs.c, xs.h / 2, xs.w / 2});
  std::vector<std::uint32_t> argmax(out.size());
  const Tensor<T>& xv = g.value(x);
  std::size_t o = 0;
  for (int n = 0; n < xs.n; ++n) {
    for (int c = 0; c < xs.c; ++c) {
      for (int i = 0; i < xs.h / 2; ++i) {
        for (int j = 0; j < xs.w / 2; ++j, ++o) {
          std::size_t best = xv.offset(n, c, 2 * i, 2 * j);
          for (int k = 1; k < 4; ++k) {
            const std::size_t cand = xv.offset(n, c, 2 * i + k / 2, 2 * j + k % 2);
            if (xv.data[cand] > xv.data[best]) best = cand;
          }
          argmax[o] = static_cast<std::uint32_t>(best);
          out.data[o] = xv.data[best];
        }
      }
    }
  }
  if (g.tracking()) g.decisions().insert(g.decisions().end(), argmax.begin(), argmax.end());
  return g.record("maxpool2", std::move(out), {x}, [x, argmax = std::move(argmax)](Graph<T>& g, const Tensor<T>& dy) {
    auto& dx = g.grad(x).data;
    for (std::size_t o = 0; o < argmax.size(); ++o) dx[argmax[o]] += dy.data[o];
  });
}

/// Nearest-neighbour 2x upsampling.
template <class T>
Var upsample2(Graph<T>& g, Var x) {
  const Shape xs = g.shape(x);
  Tensor<T> out(Shape{xs.n, xs.c, 2 * xs.h, 2 * xs.w});
  const Tensor<T>& xv = g.value(x);
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c)
      for (int y = 0; y < 2 * xs.h; ++y)
        for (int xx = 0; xx < 2 * xs.w; ++xx) out.at(n, c, y, xx) = xv.at(n, c, y / 2, xx / 2);
  return g.record("upsample2", std::move(out), {x}, [x, xs](Graph<T>& g, const Tensor<T>& dy) {
    auto& dx = g.grad(x);
    for (int n = 0; n < xs.n; ++n)
      for (int c = 0; c < xs.c; ++c)
        for (int y = 0; y < 2 * xs.h; ++y)
          for (int xx = 0; xx < 2 * xs.w; ++xx) dx.at(n, c, y / 2, xx / 2) += dy.at(n, c, y, xx);
  });
}

/// max(x, 0); the subgradient at 0 is 0.
template <class T>
Var relu(Graph<T>& g, Var x) {
  Tensor<T> out = g.value(x);
  for (auto& v : out.data) v = v > T{} ? v : T{};
  if (g.tracking()) {
    for (auto v : g.value(x).data) g.decisions().push_back(v > T{} ? 1u : 0u);
  }
  return g.record("relu", std::move(out), {x}, [x](Graph<T>& g, const Tensor<T>& dy) {
    const auto& xv = g.value(x).data;
    auto& dx = g.grad(x).data;
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (xv[i] > T{}) dx[i] += dy.data[i];
    }
  });
}

template <class T>
T sigmoid_scalar(T v) {
  return v >= T{} ? T{1} / (T{1} + std::exp(-v)) : std::exp(v) / (T{1} + std::exp(v));
}

template <class T>
Var sigmoid(Graph<T>& g, Var x) {
  Tensor<T> out = g.value(x);
  for (auto& v : out.data) v = sigmoid_scalar(v);
  return g.record("sigmoid", std::move(out), {x}, [x](Graph<T>& g, const Tensor<T>& dy) {
    const auto& xv = g.value(x).data;
    auto& dx = g.grad(x).data;
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const T s = sigmoid_scalar(xv[i]);
      dx[i] += dy.data[i] * s * (T{1} - s);
    }
  });
}

/// Concatenates along channels: (n, ca, h, w) ++ (n, cb, h, w).
template <class T>
Var concat_channels(Graph<T>& g, Var a, Var b) {
  const Shape as = g.shape(a), bs = g.shape(b);
  if (as.n != bs.n || as.h != bs.h || as.w != bs.w) {
    throw ShapeError("concat_channels: " + as.str() + " vs " + bs.str());
  }
  Tensor<T> out(Shape{as.n, as.c + bs.c, as.h, as.w});
  const std::size_t la = static_cast<std::size_t>(as.c) * as.plane(), lb = static_cast<std::size_t>(bs.c) * bs.plane();
  for (int n = 0; n < as.n; ++n) {
    std::copy_n(g.value(a).item(n), la, out.item(n));
    std::copy_n(g.value(b).item(n), lb, out.item(n) + la);
  }
  return g.record("concat", std::move(out), {a, b}, [a, b, la, lb, items = as.n](Graph<T>& g, const Tensor<T>& dy) {
    for (int n = 0; n < items; ++n) {
      const T* src = dy.data.data() + static_cast<std::size_t>(n) * (la + lb);
      if (g.requires_grad(a)) {
        T* d = g.grad(a).item(n);
        for (std::size_t i = 0; i < la; ++i) d[i] += src[i];
      }
      if (g.requires_grad(b)) {
        T* d = g.grad(b).item(n);
        for (std::size_t i = 0; i < lb; ++i) d[i] += src[la + i];
      }
    }
  });
}

template <class T>
Var add(Graph<T>& g, Var a, Var b) {
  detail::check_same_shape(g, a, b, "add");
  Tensor<T> out = g.value(a);
  const auto& bv = g.value(b).data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv[i];
  return g.record("add", std::move(out), {a, b}, [a, b](Graph<T>& g, const Tensor<T>& dy) {
    for (Var v : {a, b}) {
      if (!g.requires_grad(v)) continue;
      auto& d = g.grad(v).data;
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy.data[i];
    }
  });
}

/// Elementwise product of equal shapes.
template <class T>
Var mul(Graph<T>& g, Var a, Var b) {
  detail::check_same_shape(g, a, b, "mul");
  Tensor<T> out = g.value(a);
  const auto& bv = g.value(b).data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= bv[i];
  return g.record("mul", std::move(out), {a, b}, [a, b](Graph<T>& g, const Tensor<T>& dy) {
    const auto& av = g.value(a).data;
    const auto& bv = g.value(b).data;
    if (g.requires_grad(a)) {
      auto& d = g.grad(a).data;
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy.data[i] * bv[i];
    }
    if (g.requires_grad(b)) {
      auto& d = g.grad(b).data;
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy.data[i] * av[i];
    }
  });
}

/// x (n, c, h, w) scaled per pixel by alpha (n, 1, h, w).
template <class T>
Var scale_by_map(Graph<T>& g, Var x, Var alpha) {
  const Shape xs = g.shape(x), as = g.shape(alpha);
  if (as.c != 1 || as.n != xs.n || as.h != xs.h || as.w != xs.w) {
    throw ShapeError("scale_by_map: " + xs.str() + " vs " + as.str());
  }
  Tensor<T> out = g.value(x);
  const std::size_t plane = xs.plane();
  for (int n = 0; n < xs.n; ++n) {
    const T* a = g.value(alpha).item(n);
    for (int c = 0; c < xs.c; ++c) {
      T* p = out.item(n) + c * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] *= a[i];
    }
  }
  return g.record("scale_by_map", std::move(out), {x, alpha}, [x, alpha, xs, plane](Graph<T>& g, const Tensor<T>& dy) {
    for (int n = 0; n < xs.n; ++n) {
      const T* a = g.value(alpha).item(n);
      const T* xv = g.value(x).item(n);
      const T* d = dy.item(n);
      if (g.requires_grad(x)) {
        T* dx = g.grad(x).item(n);
        for (std::size_t i = 0; i < static_cast<std::size_t>(xs.c) * plane; ++i) dx[i] += d[i] * a[i % plane];
      }
      if (g.requires_grad(alpha)) {
        T* da = g.grad(alpha).item(n);
        for (std::size_t i = 0; i < plane; ++i) {
          double s = 0.0;
          for (int c = 0; c < xs.c; ++c) s += static_cast<double>(d[c * plane + i]) * xv[c * plane + i];
          da[i] += static_cast<T>(s);
        }
      }
    }
  });
}

/// Sum of all elements as a (1,1,1,1) scalar.
template <class T>
Var sum(Graph<T>& g, Var x) {
  double s = 0.0;
  for (auto v : g.value(x).data) s += v;
  return g.record("sum", Tensor<T>(Shape{}, static_cast<T>(s)), {x}, [x](Graph<T>& g, const Tensor<T>& dy) {
    for (auto& d : g.grad(x).data) d += dy.data[0];
  });
}

}  // namespace liplab::nn
