#include <doctest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "strforge/arch.hpp"

using namespace strforge;
using strforge::testing::max_abs_diff;
using strforge::testing::random_tensor;

namespace {

const LayerInfo& find(const std::vector<LayerInfo>& infos, const std::string& name) {
  for (const auto& l : infos)
    if (l.name == name) return l;
  FAIL("missing layer " << name);
  return infos.front();
}

bool within(double value, double target, double rel) { return std::abs(value - target) <= rel * target; }

}  // namespace

TEST_CASE("VGG matches its table at scale 1") {
  std::vector<std::string> warnings;
  const auto g = build_vgg(1.0);
  const auto infos = infer_shapes(g, &warnings);
  CHECK(warnings.empty());
  CHECK(infos.back().output == Shape{512, 1, 24});
  CHECK(find(infos, "Pool2").output == Shape{128, 8, 25});
  CHECK(find(infos, "Conv1").output == Shape{64, 32, 100});
  CHECK(within(static_cast<double>(param_count(g)), 5.6e6, 0.10));
  CHECK(within(static_cast<double>(flop_count(g)), 1.2e9, 0.25));
}

TEST_CASE("RCNN matches its table apart from the documented final conv") {
  std::vector<std::string> warnings;
  const auto g = build_rcnn(1.0);
  const auto infos = infer_shapes(g, &warnings);
  CHECK(infos.back().output == Shape{512, 1, 26});
  CHECK(find(infos, "Pool3").output == Shape{128, 4, 26});
  CHECK(find(infos, "Pool4").output == Shape{256, 2, 27});
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("Conv2") != std::string::npos);
  CHECK(within(static_cast<double>(param_count(g)), 1.8e6, 0.15));
}

TEST_CASE("ResNet has 29 trainable layers and the FAN-sized parameter budget") {
  std::vector<std::string> warnings;
  const auto g = build_resnet(1.0);
  const auto infos = infer_shapes(g, &warnings);
  CHECK(infos.back().output == Shape{512, 1, 26});
  CHECK(find(infos, "Conv6").output == Shape{512, 2, 27});
  CHECK(find(infos, "Pool3").output == Shape{256, 4, 26});
  CHECK(trainable_layer_count(g) == 29);
  CHECK(within(static_cast<double>(param_count(g)), 44.3e6, 0.10));
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("Block3") != std::string::npos);
}

TEST_CASE("localization network") {
  for (std::size_t f : {4u, 6u, 20u}) {
    const auto infos = infer_shapes(build_localization_net(f, 1.0));
    CHECK(infos.back().output == Shape{2 * f});
    CHECK(find(infos, "BN4").output == Shape{512, 4, 12});
  }
  std::vector<std::string> warnings;
  infer_shapes(build_localization_net(20, 1.0), &warnings);
  CHECK(warnings.empty());
  CHECK(within(static_cast<double>(param_count(build_localization_net(20, 1.0))), 1.7e6, 0.10));
  CHECK_THROWS_AS(build_localization_net(5, 1.0), ConfigError);
}

TEST_CASE("counting definitions") {
  ArchGraph fc;
  fc.input = {256, 1, 1};
  fc.layers.push_back({LayerKind::AdaptivePool, "pool", 0, {}, {}, {}, 1, false, std::nullopt});
  fc.layers.push_back({LayerKind::Fc, "fc", 37, {}, {}, {}, 1, true, std::nullopt});
  CHECK(param_count(fc) == 9509);
  CHECK(flop_count(fc) == 2 * 256 * 37);

  ArchGraph empty;
  CHECK(param_count(empty) == 0);

  ArchGraph one;
  one.input = {1, 1, 1};
  one.layers.push_back({LayerKind::Conv, "c", 1, Extent2::square(1), Extent2::square(1), Extent2::square(0), 1, false,
                        std::nullopt});
  CHECK(flop_count(one) == 2);

  ArchGraph bad;
  bad.input = {1, 5, 5};
  bad.layers.push_back({LayerKind::Conv, "Odd", 1, Extent2::square(2), Extent2::square(2), Extent2::square(0), 1, false,
                        std::nullopt});
  try {
    infer_shapes(bad);
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("Odd") != std::string::npos);
  }
}

TEST_CASE("channel scaling") {
  CHECK(scale_channels(64, 0.125) == 8);
  CHECK(scale_channels(32, 0.125) == 8);
  CHECK(scale_channels(512, 0.125) == 64);
  CHECK(scale_channels(100, 0.33) == 33);
  auto conv_params = [](const ArchGraph& g) {
    std::size_t n = 0;
    for (const auto& l : infer_shapes(g))
      if (l.kind == LayerKind::Conv && l.name != "Conv1") n += l.params;
    return static_cast<double>(n);
  };
  for (double s : {0.5, 0.25}) {
    const double ratio = conv_params(build_vgg(s)) / conv_params(build_vgg(1.0));
    CHECK(ratio == doctest::Approx(s * s).epsilon(0.05));
  }
  CHECK_THROWS_AS(build_vgg(0.0), ConfigError);
  CHECK_THROWS_AS(build_vgg(1.5), ConfigError);
}

TEST_CASE("builders are deterministic and instantiation agrees with counting") {
  CHECK(describe(build_resnet(0.25)).dump() == describe(build_resnet(0.25)).dump());
  for (const auto& g : {build_vgg(0.125), build_rcnn(0.125), build_resnet(0.125), build_localization_net(20, 0.125),
                        build_vgg(1.0), build_resnet(1.0)}) {
    ParamStore store;
    Network net(g, store, "feat");
    CHECK(store.count() == param_count(g));
  }
}

TEST_CASE("networks run at toy scale with the inferred shapes") {
  std::mt19937_64 rng(11);
  Tensor x = random_tensor({2, 1, 32, 100}, rng, -1, 1, false);
  for (const auto& g : {build_vgg(0.125), build_rcnn(0.125), build_resnet(0.125), build_localization_net(6, 0.125)}) {
    ParamStore store;
    Network net(g, store, "n");
    he_init(store, 1);
    Tensor y = net.forward(x, BatchNormMode::Train);
    Shape expected = infer_shapes(g).back().output;
    expected.insert(expected.begin(), 2);
    CHECK(y.shape() == expected);
    Tensor yi = net.forward(x, BatchNormMode::Infer);
    CHECK(yi.shape() == expected);
  }
}

TEST_CASE("GRCL with one iteration and an open gate is a plain conv stack") {
  std::mt19937_64 rng(12);
  ParamStore store;
  ArchGraph g;
  g.input = {3, 6, 7};
  g.layers.push_back({LayerKind::Grcl, "G", 4, Extent2::square(3), Extent2::square(1), Extent2::square(1), 1, false,
                      std::nullopt});
  Network net(g, store, "g");
  he_init(store, 5);
  GrclWeights w;
  w.w_f = store.get("g.G.w_f").value;
  w.w_r = store.get("g.G.w_r").value;
  w.w_gf = store.get("g.G.w_gf").value;
  w.w_gr = store.get("g.G.w_gr").value;
  auto bn = [&](const std::string& n) {
    return BnParams{store.get(n + ".gamma").value, store.get(n + ".beta").value, &store.batchnorm_state(n)};
  };
  w.init_bn = bn("g.G.bn_init");
  w.iteration_bn.push_back({bn("g.G.iter1.bn_f"), bn("g.G.iter1.bn_r"), bn("g.G.iter1.bn_gf"), bn("g.G.iter1.bn_gr")});
  Tensor u = random_tensor({2, 3, 6, 7}, rng);
  Tensor y = grcl_forward(u, w, 1, BatchNormMode::Train, true);

  const auto one = Extent2::square(1);
  BatchNormState s0, s1, s2;
  Tensor wf = conv2d(u, w.w_f, Tensor(), one, one);
  Tensor x0 = relu(batchnorm(wf, w.init_bn.gamma, w.init_bn.beta, s0, BatchNormMode::Train));
  Tensor r = batchnorm(conv2d(x0, w.w_r, Tensor(), one, one), w.iteration_bn[0][1].gamma, w.iteration_bn[0][1].beta, s1,
                       BatchNormMode::Train);
  Tensor expected = relu(add(batchnorm(wf, w.iteration_bn[0][0].gamma, w.iteration_bn[0][0].beta, s2, BatchNormMode::Train), r));
  CHECK(max_abs_diff(y.data(), expected.data()) < 1e-12);
}

TEST_CASE("describe lists every layer") {
  const auto doc = describe(build_vgg(1.0));
  CHECK(doc["layers"].size() == build_vgg(1.0).layers.size());
  CHECK(doc["params"].get<std::size_t>() == param_count(build_vgg(1.0)));
  CHECK(doc["warnings"].empty());
}
