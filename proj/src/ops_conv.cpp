#include <cmath>
#include <limits>

#include "blas.hpp"
#include "strforge/ops.hpp"

namespace strforge {

namespace {

using ImplPtr = std::shared_ptr<detail::TensorImpl>;

// Promotes [C, H, W] to [1, C, H, W]; `squeeze` reports whether to undo it.
Tensor as_batched(const Tensor& x, const char* op, bool& squeeze) {
  if (x.rank() == 4) {
    squeeze = false;
    return x;
  }
  if (x.rank() == 3) {
    squeeze = true;
    return reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)});
  }
  throw ShapeError(std::string(op) + " expects [N, C, H, W] or [C, H, W], got " + shape_str(x.shape()));
}

Tensor unbatch(const Tensor& y, bool squeeze) {
  if (!squeeze) return y;
  return reshape(y, {y.dim(1), y.dim(2), y.dim(3)});
}

struct ConvGeometry {
  std::size_t n, c, h, w, o, kh, kw, oh, ow;
  Extent2 stride, pad;
  std::size_t patch() const { return c * kh * kw; }
  std::size_t pixels() const { return oh * ow; }
};

// col[(ci*kh + i)*kw + j][(b*oh + y)*ow + x] = input at the tap, 0 in padding.
void im2col(const double* in, const ConvGeometry& g, std::vector<double>& col) {
  const std::size_t cols = g.n * g.pixels();
  col.assign(g.patch() * cols, 0.0);
  for (std::size_t ci = 0; ci < g.c; ++ci)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        double* row = col.data() + ((ci * g.kh + i) * g.kw + j) * cols;
        for (std::size_t b = 0; b < g.n; ++b) {
          const double* plane = in + (b * g.c + ci) * g.h * g.w;
          for (std::size_t y = 0; y < g.oh; ++y) {
            const long sy = static_cast<long>(y * g.stride.h + i) - static_cast<long>(g.pad.h);
            if (sy < 0 || sy >= static_cast<long>(g.h)) continue;
            double* dst = row + (b * g.oh + y) * g.ow;
            const double* src = plane + static_cast<std::size_t>(sy) * g.w;
            for (std::size_t x = 0; x < g.ow; ++x) {
              const long sx = static_cast<long>(x * g.stride.w + j) - static_cast<long>(g.pad.w);
              if (sx >= 0 && sx < static_cast<long>(g.w)) dst[x] = src[sx];
            }
          }
        }
      }
}

void col2im(const std::vector<double>& col, const ConvGeometry& g, std::vector<double>& out) {
  const std::size_t cols = g.n * g.pixels();
  out.assign(g.n * g.c * g.h * g.w, 0.0);
  for (std::size_t ci = 0; ci < g.c; ++ci)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        const double* row = col.data() + ((ci * g.kh + i) * g.kw + j) * cols;
        for (std::size_t b = 0; b < g.n; ++b) {
          double* plane = out.data() + (b * g.c + ci) * g.h * g.w;
          for (std::size_t y = 0; y < g.oh; ++y) {
            const long sy = static_cast<long>(y * g.stride.h + i) - static_cast<long>(g.pad.h);
            if (sy < 0 || sy >= static_cast<long>(g.h)) continue;
            const double* src = row + (b * g.oh + y) * g.ow;
            double* dst = plane + static_cast<std::size_t>(sy) * g.w;
            for (std::size_t x = 0; x < g.ow; ++x) {
              const long sx = static_cast<long>(x * g.stride.w + j) - static_cast<long>(g.pad.w);
              if (sx >= 0 && sx < static_cast<long>(g.w)) dst[sx] += src[x];
            }
          }
        }
      }
}

std::size_t conv_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t p, const char* axis) {
  if (s == 0) throw ShapeError("conv2d stride must be >= 1");
  if (in + 2 * p < k) {
    throw ShapeError(std::string("conv2d kernel ") + std::to_string(k) + " exceeds padded " + axis + " " +
                     std::to_string(in + 2 * p));
  }
  const std::size_t span = in + 2 * p - k;
  if (span % s != 0) {
    throw ShapeError(std::string("conv2d non-integral output ") + axis + ": (" + std::to_string(in) + " + 2*" +
                     std::to_string(p) + " - " + std::to_string(k) + ")/" + std::to_string(s));
  }
  return span / s + 1;
}

}  // namespace

Tensor conv2d(const Tensor& x_in, const Tensor& weight, const Tensor& bias, Extent2 stride, Extent2 padding) {
  bool squeeze = false;
  Tensor x = as_batched(x_in, "conv2d", squeeze);
  if (weight.rank() != 4 || weight.dim(1) != x.dim(1)) {
    throw ShapeError("conv2d weight " + shape_str(weight.shape()) + " incompatible with input " +
                     shape_str(x.shape()));
  }
  ConvGeometry g{};
  g.n = x.dim(0);
  g.c = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.o = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.stride = stride;
  g.pad = padding;
  g.oh = conv_extent(g.h, g.kh, stride.h, padding.h, "height");
  g.ow = conv_extent(g.w, g.kw, stride.w, padding.w, "width");
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != g.o)) {
    throw ShapeError("conv2d bias " + shape_str(bias.shape()) + " for " + std::to_string(g.o) + " channels");
  }

  auto col = std::make_shared<std::vector<double>>();
  im2col(x.data().data(), g, *col);
  const std::size_t cols = g.n * g.pixels();
  std::vector<double> tmp(g.o * cols, 0.0);
  detail::gemm(false, false, g.o, cols, g.patch(), 1.0, weight.data().data(), g.patch(), col->data(), cols, 0.0,
               tmp.data(), cols);
  std::vector<double> out(g.n * g.o * g.pixels());
  const auto bdata = has_bias ? bias.data() : std::span<const double>{};
  for (std::size_t b = 0; b < g.n; ++b)
    for (std::size_t o = 0; o < g.o; ++o) {
      const double add = has_bias ? bdata[o] : 0.0;
      const double* src = tmp.data() + o * cols + b * g.pixels();
      double* dst = out.data() + (b * g.o + o) * g.pixels();
      for (std::size_t p = 0; p < g.pixels(); ++p) dst[p] = src[p] + add;
    }

  ImplPtr xi = x.impl(), wi = weight.impl();
  ImplPtr bi = has_bias ? bias.impl() : nullptr;
  std::vector<Tensor> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  Tensor y = Tensor::make_result({g.n, g.o, g.oh, g.ow}, std::move(out), std::move(inputs), "conv2d",
                                 [xi, wi, bi, g, col](const std::vector<double>& grad) {
                                   const std::size_t cols = g.n * g.pixels();
                                   // [N, O, P] -> [O, N*P]
                                   std::vector<double> g2(g.o * cols);
                                   for (std::size_t b = 0; b < g.n; ++b)
                                     for (std::size_t o = 0; o < g.o; ++o)
                                       std::copy_n(grad.data() + (b * g.o + o) * g.pixels(), g.pixels(),
                                                   g2.data() + o * cols + b * g.pixels());
                                   if (wi->requires_grad) {
                                     std::vector<double> dw(g.o * g.patch(), 0.0);
                                     detail::gemm(false, true, g.o, g.patch(), cols, 1.0, g2.data(), cols, col->data(),
                                                  cols, 0.0, dw.data(), g.patch());
                                     Tensor::accumulate(wi, dw);
                                   }
                                   if (bi && bi->requires_grad) {
                                     std::vector<double> db(g.o, 0.0);
                                     for (std::size_t o = 0; o < g.o; ++o)
                                       for (std::size_t k = 0; k < cols; ++k) db[o] += g2[o * cols + k];
                                     Tensor::accumulate(bi, db);
                                   }
                                   if (xi->requires_grad) {
                                     std::vector<double> dcol(g.patch() * cols, 0.0);
                                     detail::gemm(true, false, g.patch(), cols, g.o, 1.0, wi->data.data(), g.patch(),
                                                  g2.data(), cols, 0.0, dcol.data(), cols);
                                     std::vector<double> dx;
                                     col2im(dcol, g, dx);
                                     Tensor::accumulate(xi, dx);
                                   }
                                 });
  return unbatch(y, squeeze);
}

Tensor maxpool2d(const Tensor& x_in, Extent2 kernel, Extent2 stride, Extent2 padding) {
  bool squeeze = false;
  Tensor x = as_batched(x_in, "maxpool2d", squeeze);
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (stride.h == 0 || stride.w == 0) throw ShapeError("maxpool2d stride must be >= 1");
  if (h + 2 * padding.h < kernel.h || w + 2 * padding.w < kernel.w) {
    throw ShapeError("maxpool2d kernel " + std::to_string(kernel.w) + "x" + std::to_string(kernel.h) +
                     " larger than padded input " + std::to_string(w + 2 * padding.w) + "x" +
                     std::to_string(h + 2 * padding.h));
  }
  const std::size_t oh = (h + 2 * padding.h - kernel.h) / stride.h + 1;
  const std::size_t ow = (w + 2 * padding.w - kernel.w) / stride.w + 1;
  const auto in = x.data();
  std::vector<double> out(n * c * oh * ow);
  std::vector<long> arg(out.size(), -1);
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const double* src = in.data() + plane * h * w;
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xo = 0; xo < ow; ++xo) {
        double best = -std::numeric_limits<double>::infinity();
        long best_idx = -1;
        for (std::size_t i = 0; i < kernel.h; ++i) {
          const long sy = static_cast<long>(y * stride.h + i) - static_cast<long>(padding.h);
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          for (std::size_t j = 0; j < kernel.w; ++j) {
            const long sx = static_cast<long>(xo * stride.w + j) - static_cast<long>(padding.w);
            if (sx < 0 || sx >= static_cast<long>(w)) continue;
            const double v = src[sy * static_cast<long>(w) + sx];
            if (best_idx < 0 || v > best) {
              best = v;
              best_idx = sy * static_cast<long>(w) + sx;
            }
          }
        }
        const std::size_t k = (plane * oh + y) * ow + xo;
        out[k] = best;
        arg[k] = best_idx < 0 ? -1 : static_cast<long>(plane * h * w) + best_idx;
      }
  }
  ImplPtr xi = x.impl();
  const std::size_t total = x.numel();
  Tensor y = Tensor::make_result({n, c, oh, ow}, std::move(out), {x}, "maxpool2d",
                                 [xi, arg = std::move(arg), total](const std::vector<double>& g) {
                                   std::vector<double> dx(total, 0.0);
                                   for (std::size_t k = 0; k < g.size(); ++k)
                                     if (arg[k] >= 0) dx[static_cast<std::size_t>(arg[k])] += g[k];
                                   Tensor::accumulate(xi, dx);
                                 });
  return unbatch(y, squeeze);
}

Tensor adaptive_avg_pool(const Tensor& x_in) {
  bool squeeze = false;
  Tensor x = as_batched(x_in, "adaptive_avg_pool", squeeze);
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (hw == 0) throw ShapeError("adaptive_avg_pool over empty spatial extent");
  const auto in = x.data();
  std::vector<double> out(n * c, 0.0);
  for (std::size_t p = 0; p < n * c; ++p) {
    double s = 0.0;
    for (std::size_t k = 0; k < hw; ++k) s += in[p * hw + k];
    out[p] = s / static_cast<double>(hw);
  }
  ImplPtr xi = x.impl();
  Tensor y = Tensor::make_result({n, c}, std::move(out), {x}, "adaptive_avg_pool", [xi, hw](const std::vector<double>& g) {
    std::vector<double> dx(g.size() * hw);
    for (std::size_t p = 0; p < g.size(); ++p)
      for (std::size_t k = 0; k < hw; ++k) dx[p * hw + k] = g[p] / static_cast<double>(hw);
    Tensor::accumulate(xi, dx);
  });
  return squeeze ? reshape(y, {c}) : y;
}

Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, BatchNormMode mode) {
  if (x.rank() != 4 && x.rank() != 2) throw ShapeError("batchnorm expects [N, C, H, W] or [N, C], got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1);
  const std::size_t hw = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  if (gamma.numel() != c || beta.numel() != c) {
    throw ShapeError("batchnorm affine parameters must have " + std::to_string(c) + " entries");
  }
  const std::size_t m = n * hw;
  if (m == 0) throw ShapeError("batchnorm over an empty batch");
  const auto in = x.data();
  const auto gm = gamma.data();
  const auto bt = beta.data();
  const double eps = state.eps;

  std::vector<double> mean(c, 0.0), invstd(c, 0.0);
  if (mode == BatchNormMode::Train) {
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t k = 0; k < hw; ++k) mean[ch] += in[(b * c + ch) * hw + k];
    for (auto& v : mean) v /= static_cast<double>(m);
    std::vector<double> var(c, 0.0);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t k = 0; k < hw; ++k) {
          const double d = in[(b * c + ch) * hw + k] - mean[ch];
          var[ch] += d * d;
        }
    for (auto& v : var) v /= static_cast<double>(m);
    for (std::size_t ch = 0; ch < c; ++ch) invstd[ch] = 1.0 / std::sqrt(var[ch] + eps);
    if (state.running_mean.size() != c) {
      state.running_mean.assign(c, 0.0);
      state.running_var.assign(c, 1.0);
    }
    const double unbias = m > 1 ? static_cast<double>(m) / static_cast<double>(m - 1) : 1.0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      state.running_mean[ch] = (1.0 - state.momentum) * state.running_mean[ch] + state.momentum * mean[ch];
      state.running_var[ch] = (1.0 - state.momentum) * state.running_var[ch] + state.momentum * var[ch] * unbias;
    }
    state.initialized = true;
  } else {
    if (!state.initialized || state.running_mean.size() != c) {
      throw StateError("batchnorm inference before any batch statistics were recorded");
    }
    mean = state.running_mean;
    for (std::size_t ch = 0; ch < c; ++ch) invstd[ch] = 1.0 / std::sqrt(state.running_var[ch] + eps);
  }

  std::vector<double> xhat(in.size()), out(in.size());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t k = 0; k < hw; ++k) {
        const std::size_t i = (b * c + ch) * hw + k;
        xhat[i] = (in[i] - mean[ch]) * invstd[ch];
        out[i] = gm[ch] * xhat[i] + bt[ch];
      }

  ImplPtr xi = x.impl(), gi = gamma.impl(), bi = beta.impl();
  const bool train = mode == BatchNormMode::Train;
  return Tensor::make_result(x.shape(), std::move(out), {x, gamma, beta}, "batchnorm",
                             [xi, gi, bi, xhat = std::move(xhat), invstd, n, c, hw, m, train](const std::vector<double>& g) {
                               std::vector<double> dgamma(c, 0.0), dbeta(c, 0.0);
                               for (std::size_t b = 0; b < n; ++b)
                                 for (std::size_t ch = 0; ch < c; ++ch)
                                   for (std::size_t k = 0; k < hw; ++k) {
                                     const std::size_t i = (b * c + ch) * hw + k;
                                     dgamma[ch] += g[i] * xhat[i];
                                     dbeta[ch] += g[i];
                                   }
                               if (xi->requires_grad) {
                                 std::vector<double> dx(g.size());
                                 const double inv_m = 1.0 / static_cast<double>(m);
                                 for (std::size_t b = 0; b < n; ++b)
                                   for (std::size_t ch = 0; ch < c; ++ch) {
                                     const double scale = gi->data[ch] * invstd[ch];
                                     for (std::size_t k = 0; k < hw; ++k) {
                                       const std::size_t i = (b * c + ch) * hw + k;
                                       dx[i] = train ? scale * (g[i] - inv_m * dbeta[ch] - inv_m * xhat[i] * dgamma[ch])
                                                     : scale * g[i];
                                     }
                                   }
                                 Tensor::accumulate(xi, dx);
                               }
                               Tensor::accumulate(gi, dgamma);
                               Tensor::accumulate(bi, dbeta);
                             });
}

Tensor bilinear_sample(const Tensor& img, const Tensor& grid) {
  if (img.rank() != 4) throw ShapeError("bilinear_sample image must be [N, C, H, W], got " + shape_str(img.shape()));
  if (grid.rank() != 4 || grid.dim(3) != 2 || grid.dim(0) != img.dim(0)) {
    throw ShapeError("bilinear_sample grid must be [N, Ho, Wo, 2] matching batch, got " + shape_str(grid.shape()));
  }
  const std::size_t n = img.dim(0), c = img.dim(1), h = img.dim(2), w = img.dim(3);
  const std::size_t oh = grid.dim(1), ow = grid.dim(2), p = oh * ow;
  const auto im = img.data();
  const auto gr = grid.data();
  const double sx = static_cast<double>(w - 1) / 2.0, sy = static_cast<double>(h - 1) / 2.0;

  std::vector<double> out(n * c * p, 0.0);
  auto at = [&](std::span<const double> src, std::size_t b, std::size_t ch, long y, long x) {
    if (y < 0 || x < 0 || y >= static_cast<long>(h) || x >= static_cast<long>(w)) return 0.0;
    return src[((b * c + ch) * h + static_cast<std::size_t>(y)) * w + static_cast<std::size_t>(x)];
  };
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t q = 0; q < p; ++q) {
      const double ix = (gr[(b * p + q) * 2] + 1.0) * sx;
      const double iy = (gr[(b * p + q) * 2 + 1] + 1.0) * sy;
      const double fx = std::floor(ix), fy = std::floor(iy);
      const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
      const double ax = ix - fx, ay = iy - fy;
      for (std::size_t ch = 0; ch < c; ++ch) {
        out[(b * c + ch) * p + q] = (1 - ay) * ((1 - ax) * at(im, b, ch, y0, x0) + ax * at(im, b, ch, y0, x0 + 1)) +
                                    ay * ((1 - ax) * at(im, b, ch, y0 + 1, x0) + ax * at(im, b, ch, y0 + 1, x0 + 1));
      }
    }

  ImplPtr ii = img.impl(), gi = grid.impl();
  return Tensor::make_result(
      {n, c, oh, ow}, std::move(out), {img, grid}, "bilinear_sample",
      [ii, gi, n, c, h, w, p, sx, sy](const std::vector<double>& g) {
        std::vector<double> dimg(ii->requires_grad ? n * c * h * w : 0, 0.0);
        std::vector<double> dgrid(gi->requires_grad ? n * p * 2 : 0, 0.0);
        auto inside = [&](long y, long x) { return y >= 0 && x >= 0 && y < static_cast<long>(h) && x < static_cast<long>(w); };
        auto idx = [&](std::size_t b, std::size_t ch, long y, long x) {
          return ((b * c + ch) * h + static_cast<std::size_t>(y)) * w + static_cast<std::size_t>(x);
        };
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t q = 0; q < p; ++q) {
            const double ix = (gi->data[(b * p + q) * 2] + 1.0) * sx;
            const double iy = (gi->data[(b * p + q) * 2 + 1] + 1.0) * sy;
            const double fx = std::floor(ix), fy = std::floor(iy);
            const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
            const double ax = ix - fx, ay = iy - fy;
            double gx = 0.0, gy = 0.0;
            for (std::size_t ch = 0; ch < c; ++ch) {
              const double go = g[(b * c + ch) * p + q];
              if (go == 0.0) continue;
              const long ys[2] = {y0, y0 + 1};
              const long xs[2] = {x0, x0 + 1};
              const double wy[2] = {1 - ay, ay};
              const double wx[2] = {1 - ax, ax};
              double v[2][2] = {{0, 0}, {0, 0}};
              for (int a = 0; a < 2; ++a)
                for (int e = 0; e < 2; ++e)
                  if (inside(ys[a], xs[e])) {
                    v[a][e] = ii->data[idx(b, ch, ys[a], xs[e])];
                    if (!dimg.empty()) dimg[idx(b, ch, ys[a], xs[e])] += go * wy[a] * wx[e];
                  }
              gx += go * (wy[0] * (v[0][1] - v[0][0]) + wy[1] * (v[1][1] - v[1][0]));
              gy += go * (wx[0] * (v[1][0] - v[0][0]) + wx[1] * (v[1][1] - v[0][1]));
            }
            if (!dgrid.empty()) {
              dgrid[(b * p + q) * 2] += gx * sx;
              dgrid[(b * p + q) * 2 + 1] += gy * sy;
            }
          }
        if (!dimg.empty()) Tensor::accumulate(ii, dimg);
        if (!dgrid.empty()) Tensor::accumulate(gi, dgrid);
      });
}

}  // namespace strforge
