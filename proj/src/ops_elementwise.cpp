#include <algorithm>
#include <cmath>
#include <limits>

#include "strforge/ops.hpp"

namespace strforge {

namespace {

using ImplPtr = std::shared_ptr<detail::TensorImpl>;

// For each flat index of `dst`, the flat index of `src` that feeds it.
std::vector<std::size_t> broadcast_map(const Shape& src, const Shape& dst) {
  if (src.size() > dst.size()) {
    throw ShapeError("cannot broadcast " + shape_str(src) + " to " + shape_str(dst));
  }
  const std::size_t offset = dst.size() - src.size();
  std::vector<std::size_t> src_stride(dst.size(), 0);
  std::size_t stride = 1;
  for (std::size_t i = src.size(); i-- > 0;) {
    const std::size_t d = i + offset;
    if (src[i] == dst[d]) {
      src_stride[d] = stride;
    } else if (src[i] != 1) {
      throw ShapeError("cannot broadcast " + shape_str(src) + " to " + shape_str(dst));
    }
    stride *= src[i];
  }
  const std::size_t n = shape_numel(dst);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(dst.size(), 0);
  std::size_t src_flat = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    map[flat] = src_flat;
    for (std::size_t d = dst.size(); d-- > 0;) {
      ++idx[d];
      src_flat += src_stride[d];
      if (idx[d] < dst[d]) break;
      src_flat -= src_stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  return map;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("incompatible shapes " + shape_str(a) + " and " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

template <class Forward, class Derivative>
Tensor unary(const Tensor& x, const char* op, Forward f, Derivative df) {
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  ImplPtr xi = x.impl();
  return Tensor::make_result(x.shape(), std::move(out), {x}, op, [xi, df](const std::vector<double>& g) {
    std::vector<double> dx(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] = g[i] * df(xi->data[i]);
    Tensor::accumulate(xi, dx);
  });
}

double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  auto map = broadcast_map(x.shape(), shape);
  const auto in = x.data();
  std::vector<double> out(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) out[i] = in[map[i]];
  ImplPtr xi = x.impl();
  const std::size_t src_n = x.numel();
  return Tensor::make_result(shape, std::move(out), {x}, "broadcast_to",
                             [xi, map = std::move(map), src_n](const std::vector<double>& g) {
                               std::vector<double> dx(src_n, 0.0);
                               for (std::size_t i = 0; i < map.size(); ++i) dx[map[i]] += g[i];
                               Tensor::accumulate(xi, dx);
                             });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    const Shape s = broadcast_shape(a.shape(), b.shape());
    return add(broadcast_to(a, s), broadcast_to(b, s));
  }
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  ImplPtr ai = a.impl(), bi = b.impl();
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, "add", [ai, bi](const std::vector<double>& g) {
    Tensor::accumulate(ai, g);
    Tensor::accumulate(bi, g);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, neg(b)); }

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    const Shape s = broadcast_shape(a.shape(), b.shape());
    return mul(broadcast_to(a, s), broadcast_to(b, s));
  }
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  ImplPtr ai = a.impl(), bi = b.impl();
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, "mul", [ai, bi](const std::vector<double>& g) {
    if (ai->requires_grad) {
      std::vector<double> d(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] * bi->data[i];
      Tensor::accumulate(ai, d);
    }
    if (bi->requires_grad) {
      std::vector<double> d(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] * ai->data[i];
      Tensor::accumulate(bi, d);
    }
  });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor scale(const Tensor& x, double factor) {
  return unary(x, "scale", [factor](double v) { return v * factor; }, [factor](double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(x, "add_scalar", [value](double v) { return v + value; }, [](double) { return 1.0; });
}

Tensor relu(const Tensor& x) {
  return unary(x, "relu", [](double v) { return v > 0 ? v : 0.0; }, [](double v) { return v > 0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, "tanh", [](double v) { return std::tanh(v); },
      [](double v) {
        const double t = std::tanh(v);
        return 1.0 - t * t;
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, "sigmoid", stable_sigmoid, [](double v) {
    const double s = stable_sigmoid(v);
    return s * (1.0 - s);
  });
}

Tensor exp(const Tensor& x) {
  return unary(x, "exp", [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

Tensor log(const Tensor& x) {
  return unary(x, "log", [](double v) { return std::log(v); }, [](double v) { return 1.0 / v; });
}

Tensor hardtanh(const Tensor& x, double lo, double hi) {
  return unary(
      x, "hardtanh", [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor log_add_exp(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("log_add_exp shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double m = std::max(x[i], y[i]);
    out[i] = m == kNegInf ? kNegInf : m + std::log(std::exp(x[i] - m) + std::exp(y[i] - m));
  }
  ImplPtr ai = a.impl(), bi = b.impl();
  return Tensor::make_result(a.shape(), out, {a, b}, "log_add_exp",
                             [ai, bi, out](const std::vector<double>& g) {
                               std::vector<double> da(g.size(), 0.0), db(g.size(), 0.0);
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                 if (out[i] == kNegInf) continue;
                                 da[i] = g[i] * std::exp(ai->data[i] - out[i]);
                                 db[i] = g[i] * std::exp(bi->data[i] - out[i]);
                               }
                               Tensor::accumulate(ai, da);
                               Tensor::accumulate(bi, db);
                             });
}

Tensor sum(const Tensor& x) {
  const auto in = x.data();
  double s = 0.0;
  for (double v : in) s += v;
  ImplPtr xi = x.impl();
  const std::size_t n = in.size();
  return Tensor::make_result({}, {s}, {x}, "sum", [xi, n](const std::vector<double>& g) {
    Tensor::accumulate(xi, std::vector<double>(n, g[0]));
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

namespace {

struct AxisSplit {
  std::size_t outer = 1, axis = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.axis = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

Tensor sum_axis(const Tensor& x, std::size_t axis, bool keepdim) {
  const AxisSplit sp = split_axis(x.shape(), axis);
  const auto in = x.data();
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t a = 0; a < sp.axis; ++a)
      for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += in[(o * sp.axis + a) * sp.inner + i];
  Shape shape = x.shape();
  if (keepdim) {
    shape[axis] = 1;
  } else {
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  ImplPtr xi = x.impl();
  return Tensor::make_result(shape, std::move(out), {x}, "sum_axis", [xi, sp](const std::vector<double>& g) {
    std::vector<double> dx(sp.outer * sp.axis * sp.inner);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t a = 0; a < sp.axis; ++a)
        for (std::size_t i = 0; i < sp.inner; ++i) dx[(o * sp.axis + a) * sp.inner + i] = g[o * sp.inner + i];
    Tensor::accumulate(xi, dx);
  });
}

namespace {

// Row-wise log-softmax over the split axis into `out`.
void log_softmax_into(std::span<const double> in, const AxisSplit& sp, std::vector<double>& out) {
  out.resize(in.size());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.axis * sp.inner + i;
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < sp.axis; ++a) m = std::max(m, in[base + a * sp.inner]);
      double s = 0.0;
      for (std::size_t a = 0; a < sp.axis; ++a) s += std::exp(in[base + a * sp.inner] - m);
      const double lse = m + std::log(s);
      for (std::size_t a = 0; a < sp.axis; ++a) out[base + a * sp.inner] = in[base + a * sp.inner] - lse;
    }
  }
}

}  // namespace

Tensor softmax(const Tensor& x, std::size_t axis) {
  const AxisSplit sp = split_axis(x.shape(), axis);
  std::vector<double> out;
  log_softmax_into(x.data(), sp, out);
  for (double& v : out) v = std::exp(v);
  ImplPtr xi = x.impl();
  return Tensor::make_result(x.shape(), out, {x}, "softmax", [xi, sp, out](const std::vector<double>& g) {
    std::vector<double> dx(g.size());
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t base = o * sp.axis * sp.inner + i;
        double dot = 0.0;
        for (std::size_t a = 0; a < sp.axis; ++a) dot += g[base + a * sp.inner] * out[base + a * sp.inner];
        for (std::size_t a = 0; a < sp.axis; ++a) {
          const std::size_t k = base + a * sp.inner;
          dx[k] = out[k] * (g[k] - dot);
        }
      }
    Tensor::accumulate(xi, dx);
  });
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  const AxisSplit sp = split_axis(x.shape(), axis);
  std::vector<double> out;
  log_softmax_into(x.data(), sp, out);
  ImplPtr xi = x.impl();
  return Tensor::make_result(x.shape(), out, {x}, "log_softmax", [xi, sp, out](const std::vector<double>& g) {
    std::vector<double> dx(g.size());
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t base = o * sp.axis * sp.inner + i;
        double gs = 0.0;
        for (std::size_t a = 0; a < sp.axis; ++a) gs += g[base + a * sp.inner];
        for (std::size_t a = 0; a < sp.axis; ++a) {
          const std::size_t k = base + a * sp.inner;
          dx[k] = g[k] - std::exp(out[k]) * gs;
        }
      }
    Tensor::accumulate(xi, dx);
  });
}

}  // namespace strforge
