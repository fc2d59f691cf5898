#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "strforge/arch.hpp"

namespace strforge {

/// F base fiducials as an [F, 2] tensor of (x, y) rows: F/2 evenly spaced
/// along the top edge (y = -1), then F/2 along the bottom edge (y = +1).
Tensor base_fiducials(std::size_t fiducials);

/// d^2 ln d with the continuous limit 0 at d = 0.
double tps_radial(double d);

/// The constant (F+3)x(F+3) system built from the base points, kept with its
/// LU factors. Immutable after construction.
class TpsSystem {
 public:
  /// `base` is [F, 2]. Throws DegeneracyError when the system is singular.
  explicit TpsSystem(const Tensor& base);

  std::size_t fiducials() const { return f_; }
  const Tensor& base() const { return base_; }
  /// Row-major (F+3)x(F+3).
  const std::vector<double>& delta() const { return delta_; }

  /// Solves for T in [2, F+3] (or [N, 2, F+3] for C of [N, F, 2]).
  Tensor solve_T(const Tensor& C) const;

  /// [P, F+3] rows [1, x, y, r_1 .. r_F] for the target pixel grid of
  /// height h and width w (row-major pixel order).
  Tensor basis(std::size_t h, std::size_t w) const;
  /// Basis rows for arbitrary points [P, 2].
  Tensor basis_at(const Tensor& points) const;
  /// First F columns of the inverse system, [F+3, F]: T^T = inverse_head() * C.
  const Tensor& inverse_head() const { return inv_head_; }

 private:
  std::size_t f_;
  Tensor base_;
  std::vector<double> delta_;
  std::vector<double> lu_;
  std::vector<int> pivots_;
  Tensor inv_head_;  // first F columns of the inverse, [F+3, F]
};

/// Maps every target pixel through T: [2, F+3] -> [1, h, w, 2], or
/// [N, 2, F+3] -> [N, h, w, 2]. Coordinates are normalised with corners at
/// -1 and +1.
Tensor generate_grid(const TpsSystem& sys, const Tensor& T, std::size_t h, std::size_t w);

/// Applies T ([2, F+3]) to points [P, 2]; returns [P, 2].
Tensor tps_map_points(const TpsSystem& sys, const Tensor& T, const Tensor& points);

/// Localization network, fiducial head and sampler.
class TpsTransform {
 public:
  TpsTransform(std::size_t fiducials, double scale, ParamStore& store, const std::string& prefix,
               std::size_t out_h = 32, std::size_t out_w = 100);

  /// Predicted fiducials [N, F, 2] for images [N, 1, H, W].
  Tensor fiducials(const Tensor& x, BatchNormMode mode) const;
  /// Rectified image [N, 1, out_h, out_w].
  Tensor forward(const Tensor& x, BatchNormMode mode) const;
  const TpsSystem& system() const { return sys_; }

 private:
  TpsSystem sys_;
  Network loc_;
  std::size_t out_h_, out_w_;
  Tensor grid_map_;  // basis(out_h, out_w) x inv_head, [P, F]
};

/// Debug dump: base points, Delta and the identity grid.
nlohmann::json tps_debug_json(std::size_t fiducials, std::size_t h, std::size_t w);

}  // namespace strforge
