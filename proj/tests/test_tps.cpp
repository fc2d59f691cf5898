#include <doctest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "strforge/gradcheck.hpp"
#include "strforge/tps.hpp"

using namespace strforge;
using strforge::testing::max_abs_diff;
using strforge::testing::random_tensor;
using strforge::testing::values;

namespace {

Tensor pixel_grid(std::size_t h, std::size_t w) {
  std::vector<double> v;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      v.push_back(-1.0 + 2.0 * static_cast<double>(x) / static_cast<double>(w - 1));
      v.push_back(-1.0 + 2.0 * static_cast<double>(y) / static_cast<double>(h - 1));
    }
  return Tensor::from({1, h, w, 2}, v);
}

}  // namespace

TEST_CASE("base fiducial layouts") {
  CHECK(values(base_fiducials(4)) == std::vector<double>{-1, -1, 1, -1, -1, 1, 1, 1});
  CHECK(values(base_fiducials(6)) == std::vector<double>{-1, -1, 0, -1, 1, -1, -1, 1, 0, 1, 1, 1});
  const auto b20 = values(base_fiducials(20));
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(b20[2 * i] == doctest::Approx(-1.0 + i * 2.0 / 9.0).epsilon(1e-15));
    CHECK(b20[2 * i + 1] == -1.0);
    CHECK(b20[20 + 2 * i] == doctest::Approx(-1.0 + i * 2.0 / 9.0).epsilon(1e-15));
    CHECK(b20[20 + 2 * i + 1] == 1.0);
  }
  CHECK_THROWS_AS(base_fiducials(7), ConfigError);
  CHECK_THROWS_AS(base_fiducials(2), ConfigError);
}

TEST_CASE("delta matrix structure") {
  TpsSystem sys(base_fiducials(4));
  const auto& d = sys.delta();
  const std::size_t n = 7;
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(d[i * n + 3 + i] == 0.0);
    for (std::size_t j = 0; j < 4; ++j) CHECK(d[i * n + 3 + j] == d[j * n + 3 + i]);
  }
  // Corners: side length 2, diagonal 2*sqrt(2).
  CHECK(d[0 * n + 3 + 1] == doctest::Approx(4.0 * std::log(2.0)).epsilon(1e-14));
  CHECK(d[0 * n + 3 + 3] == doctest::Approx(8.0 * std::log(2.0 * std::sqrt(2.0))).epsilon(1e-14));
  CHECK(d[4 * n + 0] == 0.0);
  CHECK(d[4 * n + 3] == 1.0);

  Tensor dup = Tensor::from({4, 2}, {-1, -1, 1, -1, -1, 1, -1, 1});
  CHECK_THROWS_AS(TpsSystem{dup}, DegeneracyError);
}

TEST_CASE("identity and affine maps are reproduced") {
  for (std::size_t f : {6u, 20u}) {
    TpsSystem sys(base_fiducials(f));
    Tensor grid = generate_grid(sys, sys.solve_T(sys.base()), 32, 100);
    CHECK(grid.shape() == Shape{1, 32, 100, 2});
    CHECK(grid.numel() / 2 == 3200);
    CHECK(max_abs_diff(grid.data(), pixel_grid(32, 100).data()) < 1e-9);

    // C = A C~ + t.
    const double a00 = 0.8, a01 = 0.1, a10 = -0.05, a11 = 0.7, tx = 0.1, ty = -0.2;
    std::vector<double> c;
    const auto b = values(sys.base());
    for (std::size_t i = 0; i < f; ++i) {
      c.push_back(a00 * b[2 * i] + a01 * b[2 * i + 1] + tx);
      c.push_back(a10 * b[2 * i] + a11 * b[2 * i + 1] + ty);
    }
    Tensor T = sys.solve_T(Tensor::from({f, 2}, c));
    for (std::size_t k = 3; k < f + 3; ++k) {
      CHECK(std::abs(T.at({0, k})) < 1e-9);
      CHECK(std::abs(T.at({1, k})) < 1e-9);
    }
    Tensor g = generate_grid(sys, T, 9, 13);
    const auto ref = values(pixel_grid(9, 13));
    double worst = 0.0;
    for (std::size_t i = 0; i < ref.size() / 2; ++i) {
      const double x = ref[2 * i], y = ref[2 * i + 1];
      worst = std::max(worst, std::abs(g.data()[2 * i] - (a00 * x + a01 * y + tx)));
      worst = std::max(worst, std::abs(g.data()[2 * i + 1] - (a10 * x + a11 * y + ty)));
    }
    CHECK(worst < 1e-8);

    // Pure translation.
    std::vector<double> shifted = b;
    for (std::size_t i = 0; i < f; ++i) shifted[2 * i] += 0.1;
    Tensor gs = generate_grid(sys, sys.solve_T(Tensor::from({f, 2}, shifted)), 4, 5);
    auto pg = values(pixel_grid(4, 5));
    for (std::size_t i = 0; i < pg.size(); i += 2) pg[i] += 0.1;
    CHECK(max_abs_diff(gs.data(), pg) < 1e-9);
  }
}

TEST_CASE("property: interpolation at the base points over 100 seeds") {
  double worst = 0.0;
  for (std::size_t f : {6u, 20u}) {
    TpsSystem sys(base_fiducials(f));
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      std::mt19937_64 rng(seed);
      Tensor C = random_tensor({f, 2}, rng, -1, 1, false);
      Tensor mapped = tps_map_points(sys, sys.solve_T(C), sys.base());
      worst = std::max(worst, max_abs_diff(mapped.data(), C.data()));
    }
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("batched solve matches per-sample solve and grids are deterministic") {
  std::mt19937_64 rng(3);
  TpsSystem sys(base_fiducials(6));
  Tensor C = random_tensor({3, 6, 2}, rng, -1, 1, false);
  Tensor Tb = sys.solve_T(C);
  CHECK(Tb.shape() == Shape{3, 2, 9});
  Tensor gb = generate_grid(sys, Tb, 5, 7);
  for (std::size_t n = 0; n < 3; ++n) {
    Tensor Tn = sys.solve_T(select(C, 0, n));
    CHECK(max_abs_diff(select(Tb, 0, n).data(), Tn.data()) < 1e-14);
    CHECK(max_abs_diff(select(gb, 0, n).data(), select(generate_grid(sys, Tn, 5, 7), 0, 0).data()) < 1e-14);
  }
  CHECK(values(generate_grid(sys, Tb, 5, 7)) == values(gb));
}

TEST_CASE("freshly initialised transform is the identity resampling") {
  std::mt19937_64 rng(4);
  ParamStore store;
  TpsTransform tps(20, 0.125, store, "tps");
  he_init(store, 9);
  Tensor x = random_tensor({2, 1, 32, 100}, rng, -1, 1, false);
  Tensor y = tps.forward(x, BatchNormMode::Train);
  CHECK(y.shape() == x.shape());
  // The head bias is stored at float precision, so the identity holds to ~1e-7.
  CHECK(max_abs_diff(y.data(), x.data()) < 1e-5);
  Tensor C = tps.fiducials(x, BatchNormMode::Train);
  CHECK(max_abs_diff(select(C, 0, 0).data(), base_fiducials(20).data()) < 1e-7);
}

TEST_CASE("gradients flow end to end through the transform") {
  std::mt19937_64 rng(5);
  ParamStore store;
  TpsTransform tps(6, 0.125, store, "tps", 8, 20);
  he_init(store, 2);
  // Perturb the head so the warp is not the identity.
  for (auto& p : store.params()) {
    if (p.name == "tps.loc.FC2.weight") {
      std::normal_distribution<double> d(0.0, 0.05);
      for (auto& v : p.value.mutable_data()) v = d(rng);
    }
    if (p.name == "tps.loc.FC2.bias") {
      for (auto& v : p.value.mutable_data()) v *= 0.8;
    }
  }
  Tensor x = random_tensor({1, 1, 8, 20}, rng);
  Tensor weights = random_tensor({1, 1, 8, 20}, rng, -1, 1, false);
  std::vector<Tensor> inputs{x, store.get("tps.loc.FC2.weight").value, store.get("tps.loc.Conv4.weight").value};
  auto report = grad_check([&](const std::vector<Tensor>&) { return sum(mul(tps.forward(x, BatchNormMode::Train), weights)); },
                           inputs, 1e-5, 1e-4, 64);
  MESSAGE("tps grad max rel error " << report.max_rel_error);
  CHECK(report.passed);
}
