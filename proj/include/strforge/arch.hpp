#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "strforge/ops.hpp"
#include "strforge/params.hpp"

namespace strforge {

enum class LayerKind { Conv, BatchNorm, Relu, MaxPool, AdaptivePool, Fc, Grcl, ResidualBlock };

std::string to_string(LayerKind kind);

/// One row of an architecture table. Kernel, stride and padding keep the
/// tables' defaults (3x3, 1, 1). `repeat` is the GRCL iteration count or the
/// number of stacked residual blocks.
struct LayerSpec {
  LayerKind kind = LayerKind::Conv;
  std::string name;
  std::size_t channels = 0;  // output channels, or output features for Fc
  Extent2 kernel{3, 3};
  Extent2 stride{1, 1};
  Extent2 padding{1, 1};
  std::size_t repeat = 1;
  bool bias = true;
  std::optional<Extent2> expected;  // table "Output" extent (at scale 1)
};

struct ArchGraph {
  std::string name;
  std::vector<LayerSpec> layers;
  Shape input{1, 32, 100};  // C, H, W
  double scale = 1.0;
  /// Table rows that could not be built as printed, with what was built instead.
  std::vector<std::string> notes;
};

/// Scaled channel count: ceil(c * scale), at least 8.
std::size_t scale_channels(std::size_t c, double scale);

ArchGraph build_vgg(double scale = 1.0);
ArchGraph build_rcnn(double scale = 1.0, std::size_t grcl_iterations = 5);
ArchGraph build_resnet(double scale = 1.0);
ArchGraph build_localization_net(std::size_t fiducials = 20, double scale = 1.0);

struct LayerInfo {
  std::string name;
  LayerKind kind;
  Shape output;  // [C, H, W] or [features]
  std::size_t params = 0;
  std::uint64_t flops = 0;
  std::size_t trainable_layers = 0;  // conv/fc weight layers, projections excluded
};

/// Per-layer output shapes for `input` (defaults to the graph's input).
/// Throws ShapeError naming the layer on impossible arithmetic. Mismatches
/// against a row's expected extent are appended to `warnings` when scale is 1.
std::vector<LayerInfo> infer_shapes(const ArchGraph& g, std::vector<std::string>* warnings = nullptr,
                                    std::optional<Shape> input = std::nullopt);
std::size_t param_count(const ArchGraph& g);
/// Approximate: 2 x multiply-accumulates of conv and fc layers.
std::uint64_t flop_count(const ArchGraph& g, std::optional<Shape> input = std::nullopt);
std::size_t trainable_layer_count(const ArchGraph& g);
nlohmann::json describe(const ArchGraph& g);

struct BnParams {
  Tensor gamma, beta;
  BatchNormState* state = nullptr;
};

/// Gated recurrent conv layer. w_f/w_r are kxk, the gate convs 1x1, all
/// shared across iterations; each iteration owns four batch norms
/// (feed-forward, recurrent, gate feed-forward, gate recurrent).
struct GrclWeights {
  Tensor w_f, w_r, w_gf, w_gr;
  BnParams init_bn;
  std::vector<std::array<BnParams, 4>> iteration_bn;
  Extent2 padding{1, 1};
};

/// x_0 = relu(BN(w_f*u)); x_t = relu(BN(w_f*u) + G_t * BN(w_r*x_{t-1})) with
/// G_t = sigmoid(BN(w_gf*u) + BN(w_gr*x_{t-1})). `gate_open` pins G_t to 1.
Tensor grcl_forward(const Tensor& u, const GrclWeights& w, std::size_t iterations, BatchNormMode mode,
                    bool gate_open = false);

/// Parameter layout and forward pass of an ArchGraph. Parameters live in the
/// shared store under `prefix`.
class Network {
 public:
  Network(const ArchGraph& g, ParamStore& store, const std::string& prefix);

  /// x is [N, C, H, W].
  Tensor forward(const Tensor& x, BatchNormMode mode) const;
  const ArchGraph& graph() const { return graph_; }

 private:
  struct ConvBn {
    Tensor weight;
    BnParams bn;
    Extent2 stride, padding;
  };
  struct Block {
    ConvBn a, b;
    std::optional<ConvBn> shortcut;
  };
  struct Layer {
    LayerSpec spec;
    Tensor weight, bias;
    BnParams bn;
    std::optional<GrclWeights> grcl;
    std::vector<Block> blocks;
  };

  ArchGraph graph_;
  std::vector<Layer> layers_;
};

}  // namespace strforge
