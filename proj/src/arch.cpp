#include "strforge/arch.hpp"

#include <cmath>
#include <sstream>

namespace strforge {

namespace {

std::string wxh_str(std::size_t w, std::size_t h) { return std::to_string(w) + "x" + std::to_string(h); }

struct Builder {
  ArchGraph g;

  LayerSpec& push(LayerSpec spec) {
    g.layers.push_back(std::move(spec));
    return g.layers.back();
  }
  std::size_t ch(std::size_t c) const { return scale_channels(c, g.scale); }

  void conv(const std::string& name, std::size_t c, Extent2 k, Extent2 s, Extent2 p, bool bias,
            std::optional<Extent2> expected) {
    push({LayerKind::Conv, name, ch(c), k, s, p, 1, bias, expected});
  }
  void conv3(const std::string& name, std::size_t c, bool bias, Extent2 expected) {
    conv(name, c, Extent2::square(3), Extent2::square(1), Extent2::square(1), bias, expected);
  }
  void bn(const std::string& name, std::optional<Extent2> expected = std::nullopt) {
    push({LayerKind::BatchNorm, name, 0, {}, {}, {}, 1, false, expected});
  }
  void relu(const std::string& name) { push({LayerKind::Relu, name, 0, {}, {}, {}, 1, false, std::nullopt}); }
  void pool(const std::string& name, Extent2 k, Extent2 s, Extent2 p, Extent2 expected) {
    push({LayerKind::MaxPool, name, 0, k, s, p, 1, false, expected});
  }
  void pool2(const std::string& name, Extent2 expected) {
    pool(name, Extent2::square(2), Extent2::square(2), Extent2::square(0), expected);
  }
  void conv_bn_relu(const std::string& name, std::size_t c, Extent2 expected) {
    conv3(name, c, false, expected);
    bn(name + ".bn");
    relu(name + ".relu");
  }
};

Builder start(const std::string& name, double scale) {
  if (!(scale > 0.0 && scale <= 1.0)) throw ConfigError("channel scale must lie in (0, 1], got " + std::to_string(scale));
  Builder b;
  b.g.name = name;
  b.g.scale = scale;
  return b;
}

std::size_t conv_out(std::size_t in, std::size_t k, std::size_t s, std::size_t p, const std::string& layer,
                     const char* axis) {
  if (s == 0) throw ShapeError(layer + ": stride must be >= 1");
  if (in + 2 * p < k) {
    throw ShapeError(layer + ": kernel " + std::to_string(k) + " exceeds padded " + axis + " " + std::to_string(in + 2 * p));
  }
  if ((in + 2 * p - k) % s != 0) {
    throw ShapeError(layer + ": non-integral output " + axis + " (" + std::to_string(in) + " + 2*" + std::to_string(p) +
                     " - " + std::to_string(k) + ")/" + std::to_string(s));
  }
  return (in + 2 * p - k) / s + 1;
}

std::size_t pool_out(std::size_t in, std::size_t k, std::size_t s, std::size_t p, const std::string& layer,
                     const char* axis) {
  if (s == 0) throw ShapeError(layer + ": stride must be >= 1");
  if (in + 2 * p < k) {
    throw ShapeError(layer + ": kernel " + std::to_string(k) + " exceeds padded " + axis + " " + std::to_string(in + 2 * p));
  }
  return (in + 2 * p - k) / s + 1;
}

std::uint64_t conv_flops(std::size_t cin, std::size_t cout, Extent2 k, std::size_t oh, std::size_t ow) {
  return 2ULL * cin * k.h * k.w * cout * oh * ow;
}

}  // namespace

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv: return "conv";
    case LayerKind::BatchNorm: return "bn";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool: return "pool";
    case LayerKind::AdaptivePool: return "adaptive-pool";
    case LayerKind::Fc: return "fc";
    case LayerKind::Grcl: return "grcl";
    case LayerKind::ResidualBlock: return "residual-block";
  }
  return "?";
}

std::size_t scale_channels(std::size_t c, double scale) {
  const auto scaled = static_cast<std::size_t>(std::ceil(static_cast<double>(c) * scale - 1e-9));
  return std::max<std::size_t>(8, scaled);
}

ArchGraph build_vgg(double scale) {
  Builder b = start("VGG", scale);
  const auto one = Extent2::square(1), zero = Extent2::square(0);
  b.conv3("Conv1", 64, true, Extent2::wxh(100, 32));
  b.relu("Conv1.relu");
  b.pool2("Pool1", Extent2::wxh(50, 16));
  b.conv3("Conv2", 128, true, Extent2::wxh(50, 16));
  b.relu("Conv2.relu");
  b.pool2("Pool2", Extent2::wxh(25, 8));
  b.conv3("Conv3", 256, true, Extent2::wxh(25, 8));
  b.relu("Conv3.relu");
  b.conv3("Conv4", 256, true, Extent2::wxh(25, 8));
  b.relu("Conv4.relu");
  b.pool("Pool3", Extent2::wxh(1, 2), Extent2::wxh(1, 2), zero, Extent2::wxh(25, 4));
  b.conv3("Conv5", 512, false, Extent2::wxh(25, 4));
  b.bn("BN1", Extent2::wxh(25, 4));
  b.relu("BN1.relu");
  b.conv3("Conv6", 512, false, Extent2::wxh(25, 4));
  b.bn("BN2", Extent2::wxh(25, 4));
  b.relu("BN2.relu");
  b.pool("Pool4", Extent2::wxh(1, 2), Extent2::wxh(1, 2), zero, Extent2::wxh(25, 2));
  b.conv("Conv7", 512, Extent2::square(2), one, zero, true, Extent2::wxh(24, 1));
  b.relu("Conv7.relu");
  return b.g;
}

ArchGraph build_rcnn(double scale, std::size_t grcl_iterations) {
  Builder b = start("RCNN", scale);
  const auto zero = Extent2::square(0);
  auto grcl = [&](const std::string& name, std::size_t c, Extent2 expected) {
    b.push({LayerKind::Grcl, name, b.ch(c), Extent2::square(3), Extent2::square(1), Extent2::square(1), grcl_iterations,
            false, expected});
  };
  b.conv3("Conv1", 64, true, Extent2::wxh(100, 32));
  b.relu("Conv1.relu");
  b.pool2("Pool1", Extent2::wxh(50, 16));
  grcl("GRCL1", 64, Extent2::wxh(50, 16));
  b.pool2("Pool2", Extent2::wxh(25, 8));
  grcl("GRCL2", 128, Extent2::wxh(25, 8));
  b.pool("Pool3", Extent2::square(2), Extent2::wxh(1, 2), Extent2::wxh(1, 0), Extent2::wxh(26, 4));
  grcl("GRCL3", 256, Extent2::wxh(26, 4));
  b.pool("Pool4", Extent2::square(2), Extent2::wxh(1, 2), Extent2::wxh(1, 0), Extent2::wxh(27, 2));
  // The table prints k 3x3 here, which cannot slide over a 2-row map.
  b.conv("Conv2", 512, Extent2::square(2), Extent2::square(1), zero, true, Extent2::wxh(26, 1));
  b.relu("Conv2.relu");
  b.g.notes.push_back("Conv2: table lists k 3x3 p 0x0, which does not fit the 27x2 input; built with k 2x2, giving the listed 26x1 output");
  return b.g;
}

ArchGraph build_resnet(double scale) {
  Builder b = start("ResNet", scale);
  const auto one = Extent2::square(1), zero = Extent2::square(0);
  auto block = [&](const std::string& name, std::size_t c, std::size_t n, Extent2 expected) {
    b.push({LayerKind::ResidualBlock, name, b.ch(c), Extent2::square(3), one, one, n, false, expected});
  };
  b.conv_bn_relu("Conv1", 32, Extent2::wxh(100, 32));
  b.conv_bn_relu("Conv2", 64, Extent2::wxh(100, 32));
  b.pool2("Pool1", Extent2::wxh(50, 16));
  block("Block1", 128, 1, Extent2::wxh(50, 16));
  b.conv_bn_relu("Conv3", 128, Extent2::wxh(50, 16));
  b.pool2("Pool2", Extent2::wxh(25, 8));
  block("Block2", 256, 2, Extent2::wxh(25, 8));
  b.conv_bn_relu("Conv4", 256, Extent2::wxh(25, 8));
  b.pool("Pool3", Extent2::square(2), Extent2::wxh(1, 2), Extent2::wxh(1, 0), Extent2::wxh(26, 4));
  block("Block3", 512, 5, Extent2::wxh(26, 4));
  b.conv_bn_relu("Conv5", 512, Extent2::wxh(26, 4));
  block("Block4", 512, 3, Extent2::wxh(26, 4));
  b.conv("Conv6", 512, Extent2::square(2), Extent2::wxh(1, 2), Extent2::wxh(1, 0), false, Extent2::wxh(27, 2));
  b.bn("Conv6.bn");
  b.relu("Conv6.relu");
  b.conv("Conv7", 512, Extent2::square(2), one, zero, false, Extent2::wxh(26, 1));
  b.bn("Conv7.bn");
  b.relu("Conv7.relu");
  b.g.notes.push_back("Block3: table lists [c:512; c:256] x5; both convs built with 512 channels, as in the 512-channel rows that follow");
  return b.g;
}

ArchGraph build_localization_net(std::size_t fiducials, double scale) {
  if (fiducials < 4 || fiducials % 2 != 0) throw ConfigError("fiducial count must be even and >= 4, got " + std::to_string(fiducials));
  Builder b = start("Localization", scale);
  b.conv3("Conv1", 64, false, Extent2::wxh(100, 32));
  b.bn("BN1", Extent2::wxh(100, 32));
  b.relu("BN1.relu");
  b.pool2("Pool1", Extent2::wxh(50, 16));
  b.conv3("Conv2", 128, false, Extent2::wxh(50, 16));
  b.bn("BN2", Extent2::wxh(50, 16));
  b.relu("BN2.relu");
  b.pool2("Pool2", Extent2::wxh(25, 8));
  b.conv3("Conv3", 256, false, Extent2::wxh(25, 8));
  b.bn("BN3", Extent2::wxh(25, 8));
  b.relu("BN3.relu");
  b.pool2("Pool3", Extent2::wxh(12, 4));
  b.conv3("Conv4", 512, false, Extent2::wxh(12, 4));
  b.bn("BN4", Extent2::wxh(12, 4));
  b.relu("BN4.relu");
  b.push({LayerKind::AdaptivePool, "APool", 0, {}, {}, {}, 1, false, std::nullopt});
  b.push({LayerKind::Fc, "FC1", b.ch(256), {}, {}, {}, 1, true, std::nullopt});
  b.relu("FC1.relu");
  b.push({LayerKind::Fc, "FC2", 2 * fiducials, {}, {}, {}, 1, true, std::nullopt});
  return b.g;
}

std::vector<LayerInfo> infer_shapes(const ArchGraph& g, std::vector<std::string>* warnings, std::optional<Shape> input) {
  Shape cur = input.value_or(g.input);
  if (cur.size() != 3) throw ShapeError(g.name + ": input must be [C, H, W], got " + shape_str(cur));
  std::vector<LayerInfo> out;
  for (const auto& l : g.layers) {
    LayerInfo info{l.name, l.kind, {}, 0, 0, 0};
    const bool spatial = cur.size() == 3;
    if (!spatial && l.kind != LayerKind::Fc && l.kind != LayerKind::Relu && l.kind != LayerKind::BatchNorm) {
      throw ShapeError(l.name + ": needs a [C, H, W] input, got " + shape_str(cur));
    }
    switch (l.kind) {
      case LayerKind::Conv: {
        const std::size_t oh = conv_out(cur[1], l.kernel.h, l.stride.h, l.padding.h, l.name, "height");
        const std::size_t ow = conv_out(cur[2], l.kernel.w, l.stride.w, l.padding.w, l.name, "width");
        info.params = cur[0] * l.channels * l.kernel.h * l.kernel.w + (l.bias ? l.channels : 0);
        info.flops = conv_flops(cur[0], l.channels, l.kernel, oh, ow);
        info.trainable_layers = 1;
        info.output = {l.channels, oh, ow};
        break;
      }
      case LayerKind::BatchNorm:
        info.params = 2 * cur[0];
        info.output = cur;
        break;
      case LayerKind::Relu:
        info.output = cur;
        break;
      case LayerKind::MaxPool:
        info.output = {cur[0], pool_out(cur[1], l.kernel.h, l.stride.h, l.padding.h, l.name, "height"),
                       pool_out(cur[2], l.kernel.w, l.stride.w, l.padding.w, l.name, "width")};
        break;
      case LayerKind::AdaptivePool:
        info.output = {cur[0]};
        break;
      case LayerKind::Fc: {
        const std::size_t in = shape_numel(cur);
        if (cur.size() != 1) throw ShapeError(l.name + ": fully connected layer needs a vector input, got " + shape_str(cur));
        info.params = in * l.channels + (l.bias ? l.channels : 0);
        info.flops = 2ULL * in * l.channels;
        info.trainable_layers = 1;
        info.output = {l.channels};
        break;
      }
      case LayerKind::Grcl: {
        const std::size_t cin = cur[0], c = l.channels;
        const std::size_t oh = conv_out(cur[1], l.kernel.h, 1, l.padding.h, l.name, "height");
        const std::size_t ow = conv_out(cur[2], l.kernel.w, 1, l.padding.w, l.name, "width");
        const std::size_t kk = l.kernel.h * l.kernel.w;
        info.params = cin * c * kk + c * c * kk + cin * c + c * c + 2 * c + l.repeat * 8 * c;
        info.flops = conv_flops(cin, c, l.kernel, oh, ow) + conv_flops(cin, c, Extent2::square(1), oh, ow) +
                     l.repeat * (conv_flops(c, c, l.kernel, oh, ow) + conv_flops(c, c, Extent2::square(1), oh, ow));
        info.trainable_layers = 4;
        info.output = {c, oh, ow};
        break;
      }
      case LayerKind::ResidualBlock: {
        const std::size_t c = l.channels;
        const std::size_t oh = conv_out(cur[1], l.kernel.h, 1, l.padding.h, l.name, "height");
        const std::size_t ow = conv_out(cur[2], l.kernel.w, 1, l.padding.w, l.name, "width");
        std::size_t cin = cur[0];
        const std::size_t kk = l.kernel.h * l.kernel.w;
        for (std::size_t i = 0; i < l.repeat; ++i) {
          info.params += cin * c * kk + 2 * c + c * c * kk + 2 * c;
          info.flops += conv_flops(cin, c, l.kernel, oh, ow) + conv_flops(c, c, l.kernel, oh, ow);
          if (cin != c) {
            info.params += cin * c + 2 * c;
            info.flops += conv_flops(cin, c, Extent2::square(1), oh, ow);
          }
          info.trainable_layers += 2;
          cin = c;
        }
        info.output = {c, oh, ow};
        break;
      }
    }
    if (warnings && l.expected && g.scale == 1.0 && !input) {
      const auto& o = info.output;
      if (o.size() != 3 || o[1] != l.expected->h || o[2] != l.expected->w) {
        const std::string got = o.size() == 3 ? wxh_str(o[2], o[1]) : shape_str(o);
        warnings->push_back(l.name + ": table output " + wxh_str(l.expected->w, l.expected->h) + ", computed " + got);
      }
    }
    cur = info.output;
    out.push_back(std::move(info));
  }
  if (warnings) warnings->insert(warnings->end(), g.notes.begin(), g.notes.end());
  return out;
}

std::size_t param_count(const ArchGraph& g) {
  std::size_t n = 0;
  for (const auto& l : infer_shapes(g)) n += l.params;
  return n;
}

std::uint64_t flop_count(const ArchGraph& g, std::optional<Shape> input) {
  std::uint64_t n = 0;
  for (const auto& l : infer_shapes(g, nullptr, std::move(input))) n += l.flops;
  return n;
}

std::size_t trainable_layer_count(const ArchGraph& g) {
  std::size_t n = 0;
  for (const auto& l : infer_shapes(g)) n += l.trainable_layers;
  return n;
}

nlohmann::json describe(const ArchGraph& g) {
  std::vector<std::string> warnings;
  const auto infos = infer_shapes(g, &warnings);
  nlohmann::json layers = nlohmann::json::array();
  std::size_t params = 0;
  std::uint64_t flops = 0;
  std::size_t trainable = 0;
  for (const auto& l : infos) {
    layers.push_back({{"name", l.name}, {"kind", to_string(l.kind)}, {"output", l.output}, {"params", l.params}, {"flops", l.flops}});
    params += l.params;
    flops += l.flops;
    trainable += l.trainable_layers;
  }
  return {{"name", g.name}, {"scale", g.scale},  {"input", g.input}, {"layers", layers}, {"params", params},
          {"flops", flops}, {"trainable_layers", trainable}, {"warnings", warnings}};
}

// ---- runnable network ----------------------------------------------------

namespace {

BnParams make_bn(ParamStore& store, const std::string& name, std::size_t c) {
  BnParams bn;
  bn.gamma = store.add(name + ".gamma", {c}, InitKind::One);
  bn.beta = store.add(name + ".beta", {c}, InitKind::Zero);
  bn.state = &store.batchnorm_state(name);
  bn.state->running_mean.assign(c, 0.0);
  bn.state->running_var.assign(c, 1.0);
  return bn;
}

Tensor conv_weight(ParamStore& store, const std::string& name, std::size_t cout, std::size_t cin, Extent2 k) {
  return store.add(name, {cout, cin, k.h, k.w}, InitKind::He, cin * k.h * k.w);
}

Tensor apply_bn(const Tensor& x, const BnParams& bn, BatchNormMode mode) {
  return batchnorm(x, bn.gamma, bn.beta, *bn.state, mode);
}

}  // namespace

Tensor grcl_forward(const Tensor& u, const GrclWeights& w, std::size_t iterations, BatchNormMode mode, bool gate_open) {
  if (w.iteration_bn.size() < iterations) throw ConfigError("GRCL has fewer iteration batch norms than iterations");
  const Extent2 one = Extent2::square(1), zero = Extent2::square(0);
  const Tensor wf_u = conv2d(u, w.w_f, Tensor(), one, w.padding);
  const Tensor wgf_u = gate_open ? Tensor() : conv2d(u, w.w_gf, Tensor(), one, zero);
  Tensor x = relu(apply_bn(wf_u, w.init_bn, mode));
  for (std::size_t t = 0; t < iterations; ++t) {
    const auto& bn = w.iteration_bn[t];
    Tensor rec = apply_bn(conv2d(x, w.w_r, Tensor(), one, w.padding), bn[1], mode);
    if (!gate_open) {
      Tensor gate = sigmoid(add(apply_bn(wgf_u, bn[2], mode), apply_bn(conv2d(x, w.w_gr, Tensor(), one, zero), bn[3], mode)));
      rec = mul(gate, rec);
    }
    x = relu(add(apply_bn(wf_u, bn[0], mode), rec));
  }
  return x;
}

Network::Network(const ArchGraph& g, ParamStore& store, const std::string& prefix) : graph_(g) {
  const auto infos = infer_shapes(g);
  Shape cur = g.input;
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const LayerSpec& spec = g.layers[i];
    const std::string base = prefix + "." + spec.name;
    Layer layer;
    layer.spec = spec;
    switch (spec.kind) {
      case LayerKind::Conv:
        layer.weight = conv_weight(store, base + ".weight", spec.channels, cur[0], spec.kernel);
        if (spec.bias) layer.bias = store.add(base + ".bias", {spec.channels}, InitKind::Zero);
        break;
      case LayerKind::BatchNorm:
        layer.bn = make_bn(store, base, cur[0]);
        break;
      case LayerKind::Fc: {
        const std::size_t in = shape_numel(cur);
        layer.weight = store.add(base + ".weight", {spec.channels, in}, InitKind::He, in);
        if (spec.bias) layer.bias = store.add(base + ".bias", {spec.channels}, InitKind::Zero);
        break;
      }
      case LayerKind::Grcl: {
        GrclWeights w;
        const std::size_t cin = cur[0], c = spec.channels;
        w.w_f = conv_weight(store, base + ".w_f", c, cin, spec.kernel);
        w.w_r = conv_weight(store, base + ".w_r", c, c, spec.kernel);
        w.w_gf = conv_weight(store, base + ".w_gf", c, cin, Extent2::square(1));
        w.w_gr = conv_weight(store, base + ".w_gr", c, c, Extent2::square(1));
        w.padding = spec.padding;
        w.init_bn = make_bn(store, base + ".bn_init", c);
        for (std::size_t t = 0; t < spec.repeat; ++t) {
          const std::string it = base + ".iter" + std::to_string(t + 1);
          w.iteration_bn.push_back({make_bn(store, it + ".bn_f", c), make_bn(store, it + ".bn_r", c),
                                    make_bn(store, it + ".bn_gf", c), make_bn(store, it + ".bn_gr", c)});
        }
        layer.grcl = std::move(w);
        break;
      }
      case LayerKind::ResidualBlock: {
        std::size_t cin = cur[0];
        const std::size_t c = spec.channels;
        for (std::size_t r = 0; r < spec.repeat; ++r) {
          const std::string bb = base + "." + std::to_string(r + 1);
          Block blk;
          blk.a = {conv_weight(store, bb + ".conv1", c, cin, spec.kernel), make_bn(store, bb + ".bn1", c), spec.stride, spec.padding};
          blk.b = {conv_weight(store, bb + ".conv2", c, c, spec.kernel), make_bn(store, bb + ".bn2", c), Extent2::square(1),
                   spec.padding};
          if (cin != c) {
            blk.shortcut = ConvBn{conv_weight(store, bb + ".proj", c, cin, Extent2::square(1)), make_bn(store, bb + ".proj_bn", c),
                                  spec.stride, Extent2::square(0)};
          }
          layer.blocks.push_back(std::move(blk));
          cin = c;
        }
        break;
      }
      case LayerKind::Relu:
      case LayerKind::MaxPool:
      case LayerKind::AdaptivePool:
        break;
    }
    cur = infos[i].output;
    layers_.push_back(std::move(layer));
  }
}

Tensor Network::forward(const Tensor& input, BatchNormMode mode) const {
  if (input.rank() != 4) throw ShapeError(graph_.name + " expects [N, C, H, W], got " + shape_str(input.shape()));
  Tensor x = input;
  for (const auto& l : layers_) {
    const auto& s = l.spec;
    switch (s.kind) {
      case LayerKind::Conv:
        x = conv2d(x, l.weight, l.bias, s.stride, s.padding);
        break;
      case LayerKind::BatchNorm:
        x = apply_bn(x, l.bn, mode);
        break;
      case LayerKind::Relu:
        x = relu(x);
        break;
      case LayerKind::MaxPool:
        x = maxpool2d(x, s.kernel, s.stride, s.padding);
        break;
      case LayerKind::AdaptivePool:
        x = adaptive_avg_pool(x);
        break;
      case LayerKind::Fc:
        if (x.rank() != 2) x = reshape(x, {x.dim(0), x.numel() / x.dim(0)});
        x = linear(x, l.weight, l.bias);
        break;
      case LayerKind::Grcl:
        x = grcl_forward(x, *l.grcl, s.repeat, mode);
        break;
      case LayerKind::ResidualBlock:
        for (const auto& b : l.blocks) {
          Tensor y = relu(apply_bn(conv2d(x, b.a.weight, Tensor(), b.a.stride, b.a.padding), b.a.bn, mode));
          y = apply_bn(conv2d(y, b.b.weight, Tensor(), b.b.stride, b.b.padding), b.b.bn, mode);
          Tensor sc = b.shortcut ? apply_bn(conv2d(x, b.shortcut->weight, Tensor(), b.shortcut->stride, b.shortcut->padding),
                                            b.shortcut->bn, mode)
                                 : x;
          x = relu(add(y, sc));
        }
        break;
    }
  }
  return x;
}

}  // namespace strforge
