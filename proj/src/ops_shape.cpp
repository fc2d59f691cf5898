#include <numeric>

#include "blas.hpp"
#include "strforge/ops.hpp"

namespace strforge {

namespace {
using ImplPtr = std::shared_ptr<detail::TensorImpl>;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  ImplPtr xi = x.impl();
  return Tensor::make_result(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()), {x},
                             "reshape", [xi](const std::vector<double>& g) { Tensor::accumulate(xi, g); });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& dims) {
  const Shape& in = x.shape();
  if (dims.size() != in.size()) throw ShapeError("permute rank mismatch for " + shape_str(in));
  std::vector<bool> seen(in.size(), false);
  for (auto d : dims) {
    if (d >= in.size() || seen[d]) throw ShapeError("permute dims are not a permutation");
    seen[d] = true;
  }
  std::vector<std::size_t> in_stride(in.size(), 1);
  for (std::size_t i = in.size(); i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
  Shape out_shape(in.size());
  std::vector<std::size_t> stride(in.size());
  for (std::size_t i = 0; i < dims.size(); ++i) {
    out_shape[i] = in[dims[i]];
    stride[i] = in_stride[dims[i]];
  }
  const std::size_t n = x.numel();
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(in.size(), 0);
  std::size_t src = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    map[flat] = src;
    for (std::size_t d = out_shape.size(); d-- > 0;) {
      ++idx[d];
      src += stride[d];
      if (idx[d] < out_shape[d]) break;
      src -= stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  const auto data = x.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = data[map[i]];
  ImplPtr xi = x.impl();
  return Tensor::make_result(out_shape, std::move(out), {x}, "permute",
                             [xi, map = std::move(map)](const std::vector<double>& g) {
                               std::vector<double> dx(map.size());
                               for (std::size_t i = 0; i < map.size(); ++i) dx[map[i]] = g[i];
                               Tensor::accumulate(xi, dx);
                             });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  if (axis >= s.size() || begin > end || end > s[axis]) {
    throw ShapeError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") on axis " +
                     std::to_string(axis) + " of " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = end - begin, full = s[axis];
  const auto data = x.data();
  std::vector<double> out(outer * len * inner);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(data.begin() + static_cast<std::ptrdiff_t>((o * full + begin) * inner), len * inner,
                out.begin() + static_cast<std::ptrdiff_t>(o * len * inner));
  Shape out_shape = s;
  out_shape[axis] = len;
  ImplPtr xi = x.impl();
  const std::size_t n = x.numel();
  return Tensor::make_result(out_shape, std::move(out), {x}, "slice",
                             [xi, outer, inner, len, full, begin, n](const std::vector<double>& g) {
                               std::vector<double> dx(n, 0.0);
                               for (std::size_t o = 0; o < outer; ++o)
                                 std::copy_n(g.begin() + static_cast<std::ptrdiff_t>(o * len * inner), len * inner,
                                             dx.begin() + static_cast<std::ptrdiff_t>((o * full + begin) * inner));
                               Tensor::accumulate(xi, dx);
                             });
}

Tensor select(const Tensor& x, std::size_t axis, std::size_t index) {
  Tensor s = slice(x, axis, index, index + 1);
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  return reshape(s, std::move(shape));
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat axis out of range for " + shape_str(first));
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) throw ShapeError("concat shapes " + shape_str(first) + " and " + shape_str(s));
    total += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  std::vector<double> out(outer * total * inner);
  std::vector<std::size_t> widths;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape()[axis];
    const auto d = p.data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(d.begin() + static_cast<std::ptrdiff_t>(o * w * inner), w * inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * total + offset) * inner));
    widths.push_back(w);
    offset += w;
  }
  Shape out_shape = first;
  out_shape[axis] = total;
  std::vector<ImplPtr> impls;
  for (const auto& p : parts) impls.push_back(p.impl());
  return Tensor::make_result(out_shape, std::move(out), parts, "concat",
                             [impls, widths, outer, inner, total](const std::vector<double>& g) {
                               std::size_t off = 0;
                               for (std::size_t k = 0; k < impls.size(); ++k) {
                                 const std::size_t w = widths[k];
                                 if (impls[k]->requires_grad) {
                                   std::vector<double> d(outer * w * inner);
                                   for (std::size_t o = 0; o < outer; ++o)
                                     std::copy_n(g.begin() + static_cast<std::ptrdiff_t>((o * total + off) * inner),
                                                 w * inner, d.begin() + static_cast<std::ptrdiff_t>(o * w * inner));
                                   Tensor::accumulate(impls[k], d);
                                 }
                                 off += w;
                               }
                             });
}

Tensor stack(const std::vector<Tensor>& parts, std::size_t axis) {
  std::vector<Tensor> expanded;
  expanded.reserve(parts.size());
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (axis > s.size()) throw ShapeError("stack axis out of range for " + shape_str(s));
    s.insert(s.begin() + static_cast<std::ptrdiff_t>(axis), 1);
    expanded.push_back(reshape(p, std::move(s)));
  }
  return concat(expanded, axis);
}

Tensor gather_cols(const Tensor& x, const std::vector<std::size_t>& index, std::size_t cols) {
  if (x.rank() != 2) throw ShapeError("gather_cols needs [N, K], got " + shape_str(x.shape()));
  const std::size_t rows = x.dim(0), k = x.dim(1);
  if (index.size() != rows * cols) throw ShapeError("gather_cols index size mismatch");
  const auto d = x.data();
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t j = index[r * cols + c];
      if (j >= k) throw ShapeError("gather_cols index " + std::to_string(j) + " >= " + std::to_string(k));
      out[r * cols + c] = d[r * k + j];
    }
  ImplPtr xi = x.impl();
  return Tensor::make_result({rows, cols}, std::move(out), {x}, "gather_cols",
                             [xi, index, rows, cols, k](const std::vector<double>& g) {
                               std::vector<double> dx(rows * k, 0.0);
                               for (std::size_t r = 0; r < rows; ++r)
                                 for (std::size_t c = 0; c < cols; ++c) dx[r * k + index[r * cols + c]] += g[r * cols + c];
                               Tensor::accumulate(xi, dx);
                             });
}

Tensor shift_cols(const Tensor& x, std::size_t k, double fill) {
  if (x.rank() != 2) throw ShapeError("shift_cols needs [N, S], got " + shape_str(x.shape()));
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  const auto d = x.data();
  std::vector<double> out(rows * cols, fill);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = k; c < cols; ++c) out[r * cols + c] = d[r * cols + c - k];
  ImplPtr xi = x.impl();
  return Tensor::make_result(x.shape(), std::move(out), {x}, "shift_cols",
                             [xi, rows, cols, k](const std::vector<double>& g) {
                               std::vector<double> dx(rows * cols, 0.0);
                               for (std::size_t r = 0; r < rows; ++r)
                                 for (std::size_t c = k; c < cols; ++c) dx[r * cols + c - k] = g[r * cols + c];
                               Tensor::accumulate(xi, dx);
                             });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul dimension mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  detail::gemm(false, false, m, n, k, 1.0, a.data().data(), k, b.data().data(), n, 0.0, out.data(), n);
  ImplPtr ai = a.impl(), bi = b.impl();
  return Tensor::make_result({m, n}, std::move(out), {a, b}, "matmul", [ai, bi, m, k, n](const std::vector<double>& g) {
    if (ai->requires_grad) {
      std::vector<double> da(m * k, 0.0);
      detail::gemm(false, true, m, k, n, 1.0, g.data(), n, bi->data.data(), n, 0.0, da.data(), k);
      Tensor::accumulate(ai, da);
    }
    if (bi->requires_grad) {
      std::vector<double> db(k * n, 0.0);
      detail::gemm(true, false, k, n, m, 1.0, ai->data.data(), k, g.data(), n, 0.0, db.data(), n);
      Tensor::accumulate(bi, db);
    }
  });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw ShapeError("bmm dimension mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<double> out(batch * m * n, 0.0);
  for (std::size_t p = 0; p < batch; ++p)
    detail::gemm(false, false, m, n, k, 1.0, a.data().data() + p * m * k, k, b.data().data() + p * k * n, n, 0.0,
                 out.data() + p * m * n, n);
  ImplPtr ai = a.impl(), bi = b.impl();
  return Tensor::make_result({batch, m, n}, std::move(out), {a, b}, "bmm",
                             [ai, bi, batch, m, k, n](const std::vector<double>& g) {
                               if (ai->requires_grad) {
                                 std::vector<double> da(batch * m * k, 0.0);
                                 for (std::size_t p = 0; p < batch; ++p)
                                   detail::gemm(false, true, m, k, n, 1.0, g.data() + p * m * n, n,
                                                bi->data.data() + p * k * n, n, 0.0, da.data() + p * m * k, k);
                                 Tensor::accumulate(ai, da);
                               }
                               if (bi->requires_grad) {
                                 std::vector<double> db(batch * k * n, 0.0);
                                 for (std::size_t p = 0; p < batch; ++p)
                                   detail::gemm(true, false, k, n, m, 1.0, ai->data.data() + p * m * k, k,
                                                g.data() + p * m * n, n, 0.0, db.data() + p * k * n, n);
                                 Tensor::accumulate(bi, db);
                               }
                             });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(1)) {
    throw ShapeError("linear dimension mismatch: " + shape_str(x.shape()) + " with weight " +
                     shape_str(weight.shape()));
  }
  const std::size_t rows = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != out_dim)) {
    throw ShapeError("linear bias " + shape_str(bias.shape()) + " for " + std::to_string(out_dim) + " outputs");
  }
  std::vector<double> out(rows * out_dim, 0.0);
  if (has_bias) {
    const auto b = bias.data();
    for (std::size_t r = 0; r < rows; ++r) std::copy(b.begin(), b.end(), out.begin() + static_cast<std::ptrdiff_t>(r * out_dim));
  }
  detail::gemm(false, true, rows, out_dim, in, 1.0, x.data().data(), in, weight.data().data(), in, has_bias ? 1.0 : 0.0,
               out.data(), out_dim);
  ImplPtr xi = x.impl(), wi = weight.impl();
  ImplPtr bi = has_bias ? bias.impl() : nullptr;
  std::vector<Tensor> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return Tensor::make_result({rows, out_dim}, std::move(out), std::move(inputs), "linear",
                             [xi, wi, bi, rows, in, out_dim](const std::vector<double>& g) {
                               if (xi->requires_grad) {
                                 std::vector<double> dx(rows * in, 0.0);
                                 detail::gemm(false, false, rows, in, out_dim, 1.0, g.data(), out_dim, wi->data.data(), in,
                                              0.0, dx.data(), in);
                                 Tensor::accumulate(xi, dx);
                               }
                               if (wi->requires_grad) {
                                 std::vector<double> dw(out_dim * in, 0.0);
                                 detail::gemm(true, false, out_dim, in, rows, 1.0, g.data(), out_dim, xi->data.data(), in,
                                              0.0, dw.data(), in);
                                 Tensor::accumulate(wi, dw);
                               }
                               if (bi && bi->requires_grad) {
                                 std::vector<double> db(out_dim, 0.0);
                                 for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t o = 0; o < out_dim; ++o) db[o] += g[r * out_dim + o];
                                 Tensor::accumulate(bi, db);
                               }
                             });
}

std::pair<Tensor, Tensor> lstm_cell(const Tensor& x, const Tensor& h, const Tensor& c, const LstmWeights& w) {
  const std::size_t hidden = w.w_hh.dim(1);
  if (w.w_ih.dim(0) != 4 * hidden || w.w_hh.dim(0) != 4 * hidden) {
    throw ShapeError("lstm weights must have 4H rows, got " + shape_str(w.w_ih.shape()));
  }
  if (h.rank() != 2 || h.dim(1) != hidden || c.shape() != h.shape()) {
    throw ShapeError("lstm state " + shape_str(h.shape()) + " does not match hidden size " + std::to_string(hidden));
  }
  Tensor gates = add(linear(x, w.w_ih, w.bias), linear(h, w.w_hh, Tensor{}));
  Tensor i = sigmoid(slice(gates, 1, 0, hidden));
  Tensor f = sigmoid(slice(gates, 1, hidden, 2 * hidden));
  Tensor g = tanh(slice(gates, 1, 2 * hidden, 3 * hidden));
  Tensor o = sigmoid(slice(gates, 1, 3 * hidden, 4 * hidden));
  Tensor c_next = add(mul(f, c), mul(i, g));
  Tensor h_next = mul(o, tanh(c_next));
  return {h_next, c_next};
}

}  // namespace strforge
