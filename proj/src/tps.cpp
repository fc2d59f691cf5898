#include "strforge/tps.hpp"

#include <lapacke.h>

#include <cmath>

namespace strforge {

namespace {

double coord(std::size_t i, std::size_t n) {
  return n == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1);
}

}  // namespace

Tensor base_fiducials(std::size_t fiducials) {
  if (fiducials < 4 || fiducials % 2 != 0) {
    throw ConfigError("fiducial count must be even and >= 4, got " + std::to_string(fiducials));
  }
  const std::size_t half = fiducials / 2;
  std::vector<double> pts;
  pts.reserve(2 * fiducials);
  for (double y : {-1.0, 1.0})
    for (std::size_t i = 0; i < half; ++i) {
      pts.push_back(coord(i, half));
      pts.push_back(y);
    }
  return Tensor::from({fiducials, 2}, std::move(pts));
}

double tps_radial(double d) { return d <= 0.0 ? 0.0 : d * d * std::log(d); }

TpsSystem::TpsSystem(const Tensor& base) : base_(base.detach()) {
  if (base.rank() != 2 || base.dim(1) != 2 || base.dim(0) < 3) {
    throw ShapeError("TPS base points must be [F, 2] with F >= 3, got " + shape_str(base.shape()));
  }
  f_ = base.dim(0);
  const std::size_t n = f_ + 3;
  const auto c = base_.data();
  delta_.assign(n * n, 0.0);
  for (std::size_t i = 0; i < f_; ++i) {
    delta_[i * n + 0] = 1.0;
    delta_[i * n + 1] = c[2 * i];
    delta_[i * n + 2] = c[2 * i + 1];
    for (std::size_t j = 0; j < f_; ++j) {
      delta_[i * n + 3 + j] = tps_radial(std::hypot(c[2 * i] - c[2 * j], c[2 * i + 1] - c[2 * j + 1]));
    }
  }
  for (std::size_t j = 0; j < f_; ++j) {
    delta_[f_ * n + 3 + j] = 1.0;
    delta_[(f_ + 1) * n + 3 + j] = c[2 * j];
    delta_[(f_ + 2) * n + 3 + j] = c[2 * j + 1];
  }

  lu_ = delta_;
  pivots_.assign(n, 0);
  const lapack_int info =
      LAPACKE_dgetrf(LAPACK_ROW_MAJOR, static_cast<lapack_int>(n), static_cast<lapack_int>(n), lu_.data(),
                     static_cast<lapack_int>(n), pivots_.data());
  double umax = 0.0, umin = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    umax = std::max(umax, std::abs(lu_[i * n + i]));
    umin = std::min(umin, std::abs(lu_[i * n + i]));
  }
  if (info != 0 || umin <= 1e-12 * umax) {
    throw DegeneracyError("TPS system for " + std::to_string(f_) + " base points is singular (duplicated or collinear points)");
  }

  // Right-hand sides e_0 .. e_{F-1}: the zero rows of [C^T; 0] never contribute.
  std::vector<double> rhs(n * f_, 0.0);
  for (std::size_t j = 0; j < f_; ++j) rhs[j * f_ + j] = 1.0;
  LAPACKE_dgetrs(LAPACK_ROW_MAJOR, 'N', static_cast<lapack_int>(n), static_cast<lapack_int>(f_), lu_.data(),
                 static_cast<lapack_int>(n), pivots_.data(), rhs.data(), static_cast<lapack_int>(f_));
  inv_head_ = Tensor::from({n, f_}, std::move(rhs));
}

Tensor TpsSystem::solve_T(const Tensor& C) const {
  const bool batched = C.rank() == 3;
  if (!(C.rank() == 2 || batched) || C.dim(C.rank() - 2) != f_ || C.dim(C.rank() - 1) != 2) {
    throw ShapeError("fiducials must be [F, 2] or [N, F, 2] with F = " + std::to_string(f_) + ", got " + shape_str(C.shape()));
  }
  const std::size_t nb = batched ? C.dim(0) : 1;
  Tensor cf = batched ? reshape(permute(C, {1, 0, 2}), {f_, 2 * nb}) : C;
  Tensor tt = matmul(inv_head_, cf);  // [F+3, 2N]
  if (!batched) return permute(tt, {1, 0});
  return permute(reshape(tt, {f_ + 3, nb, 2}), {1, 2, 0});
}

Tensor TpsSystem::basis_at(const Tensor& points) const {
  if (points.rank() != 2 || points.dim(1) != 2) throw ShapeError("points must be [P, 2], got " + shape_str(points.shape()));
  const auto c = base_.data();
  const auto q = points.data();
  const std::size_t np = points.dim(0);
  std::vector<double> b;
  b.reserve(np * (f_ + 3));
  for (std::size_t i = 0; i < np; ++i) {
    const double x = q[2 * i], y = q[2 * i + 1];
    b.push_back(1.0);
    b.push_back(x);
    b.push_back(y);
    for (std::size_t f = 0; f < f_; ++f) b.push_back(tps_radial(std::hypot(x - c[2 * f], y - c[2 * f + 1])));
  }
  return Tensor::from({np, f_ + 3}, std::move(b));
}

Tensor TpsSystem::basis(std::size_t h, std::size_t w) const {
  std::vector<double> pts;
  pts.reserve(2 * h * w);
  for (std::size_t yi = 0; yi < h; ++yi)
    for (std::size_t xi = 0; xi < w; ++xi) {
      pts.push_back(coord(xi, w));
      pts.push_back(coord(yi, h));
    }
  return basis_at(Tensor::from({h * w, 2}, std::move(pts)));
}

Tensor tps_map_points(const TpsSystem& sys, const Tensor& T, const Tensor& points) {
  if (T.rank() != 2 || T.dim(0) != 2 || T.dim(1) != sys.fiducials() + 3) {
    throw ShapeError("T must be [2, F+3], got " + shape_str(T.shape()));
  }
  return matmul(sys.basis_at(points), permute(T, {1, 0}));
}

Tensor generate_grid(const TpsSystem& sys, const Tensor& T, std::size_t h, std::size_t w) {
  const std::size_t k = sys.fiducials() + 3;
  const bool batched = T.rank() == 3;
  if (!(T.rank() == 2 || batched) || T.dim(T.rank() - 2) != 2 || T.dim(T.rank() - 1) != k) {
    throw ShapeError("T must be [2, F+3] or [N, 2, F+3] with F+3 = " + std::to_string(k) + ", got " + shape_str(T.shape()));
  }
  const std::size_t nb = batched ? T.dim(0) : 1;
  Tensor tt = batched ? reshape(permute(T, {2, 0, 1}), {k, 2 * nb}) : permute(T, {1, 0});
  Tensor p = matmul(sys.basis(h, w), tt);  // [P, 2N]
  return permute(reshape(p, {h, w, nb, 2}), {2, 0, 1, 3});
}

TpsTransform::TpsTransform(std::size_t fiducials, double scale, ParamStore& store, const std::string& prefix,
                           std::size_t out_h, std::size_t out_w)
    : sys_(base_fiducials(fiducials)),
      loc_(build_localization_net(fiducials, scale), store, prefix + ".loc"),
      out_h_(out_h),
      out_w_(out_w) {
  // Zero weights and base-point bias: the initial warp is the identity.
  for (auto& p : store.params()) {
    if (p.name == prefix + ".loc.FC2.weight") p.init = InitKind::Zero;
    if (p.name == prefix + ".loc.FC2.bias") {
      p.init = InitKind::Fixed;
      auto v = p.value.mutable_data();
      const auto b = sys_.base().data();
      std::copy(b.begin(), b.end(), v.begin());
    }
  }
  // Grid = basis * inv_head * C; the first product is constant.
  grid_map_ = matmul(sys_.basis(out_h, out_w), sys_.inverse_head());
}

Tensor TpsTransform::fiducials(const Tensor& x, BatchNormMode mode) const {
  Tensor raw = loc_.forward(x, mode);  // [N, 2F]
  return reshape(hardtanh(raw, -1.0, 1.0), {x.dim(0), sys_.fiducials(), 2});
}

Tensor TpsTransform::forward(const Tensor& x, BatchNormMode mode) const {
  Tensor C = fiducials(x, mode);
  const std::size_t nb = x.dim(0), f = sys_.fiducials();
  Tensor cf = reshape(permute(C, {1, 0, 2}), {f, 2 * nb});
  Tensor p = matmul(grid_map_, cf);  // [P, 2N]
  Tensor grid = permute(reshape(p, {out_h_, out_w_, nb, 2}), {2, 0, 1, 3});
  return bilinear_sample(x, grid);
}

nlohmann::json tps_debug_json(std::size_t fiducials, std::size_t h, std::size_t w) {
  TpsSystem sys(base_fiducials(fiducials));
  Tensor grid = generate_grid(sys, sys.solve_T(sys.base()), h, w);
  auto to_vec = [](const Tensor& t) {
    auto d = t.data();
    return std::vector<double>(d.begin(), d.end());
  };
  return {{"fiducials", fiducials}, {"base", to_vec(sys.base())}, {"delta", sys.delta()},
          {"grid_shape", grid.shape()}, {"identity_grid", to_vec(grid)}};
}

}  // namespace strforge
