#include "strforge/seqmodel.hpp"

namespace strforge {

namespace {

LstmWeights make_lstm(ParamStore& store, const std::string& name, std::size_t in, std::size_t hidden) {
  return {store.add(name + ".w_ih", {4 * hidden, in}, InitKind::He, in),
          store.add(name + ".w_hh", {4 * hidden, hidden}, InitKind::He, hidden),
          store.add(name + ".bias", {4 * hidden}, InitKind::LstmBias)};
}

}  // namespace

Tensor lstm_sequence(const Tensor& V, const LstmWeights& w, bool reverse) {
  if (V.rank() != 3) throw ShapeError("sequence must be [N, I, D], got " + shape_str(V.shape()));
  const std::size_t n = V.dim(0), len = V.dim(1);
  if (len == 0) throw ShapeError("empty sequence");
  const std::size_t hidden = w.w_hh.dim(1);
  Tensor h = Tensor::zeros({n, hidden}), c = Tensor::zeros({n, hidden});
  std::vector<Tensor> states(len);
  for (std::size_t k = 0; k < len; ++k) {
    const std::size_t t = reverse ? len - 1 - k : k;
    std::tie(h, c) = lstm_cell(select(V, 1, t), h, c, w);
    states[t] = h;
  }
  return stack(states, 1);
}

Tensor bidirectional_layer(const Tensor& V, const LstmWeights& fwd, const LstmWeights& bwd) {
  return concat({lstm_sequence(V, fwd, false), lstm_sequence(V, bwd, true)}, 2);
}

BiLstm::BiLstm(const BiLstmConfig& cfg, ParamStore& store, const std::string& prefix) : cfg_(cfg) {
  if (cfg.layers == 0) throw ConfigError("BiLSTM needs at least one layer");
  std::size_t in = cfg.input;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string base = prefix + ".layer" + std::to_string(l + 1);
    Layer layer;
    layer.fwd = make_lstm(store, base + ".fwd", in, cfg.hidden);
    layer.bwd = make_lstm(store, base + ".bwd", in, cfg.hidden);
    const bool project = l + 1 < cfg.layers || cfg.final_projection;
    if (project) {
      layer.proj_w = store.add(base + ".fc.weight", {cfg.projection, 2 * cfg.hidden}, InitKind::He, 2 * cfg.hidden);
      layer.proj_b = store.add(base + ".fc.bias", {cfg.projection}, InitKind::Zero);
      in = cfg.projection;
    } else {
      in = 2 * cfg.hidden;
    }
    layers_.push_back(std::move(layer));
  }
}

std::size_t BiLstm::output_width() const { return cfg_.final_projection ? cfg_.projection : 2 * cfg_.hidden; }

Tensor BiLstm::forward(const Tensor& V) const {
  if (V.rank() != 3 || V.dim(2) != cfg_.input) {
    throw ShapeError("BiLSTM expects [N, I, " + std::to_string(cfg_.input) + "], got " + shape_str(V.shape()));
  }
  Tensor x = V;
  for (const auto& layer : layers_) {
    Tensor states = bidirectional_layer(x, layer.fwd, layer.bwd);
    if (layer.proj_w.defined()) {
      const std::size_t n = states.dim(0), len = states.dim(1);
      x = reshape(linear(reshape(states, {n * len, states.dim(2)}), layer.proj_w, layer.proj_b), {n, len, cfg_.projection});
    } else {
      x = states;
    }
  }
  return x;
}

std::size_t bilstm_param_count(const BiLstmConfig& cfg) {
  std::size_t total = 0, in = cfg.input;
  const std::size_t h = cfg.hidden;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    total += 2 * (4 * h * in + 4 * h * h + 4 * h);
    if (l + 1 < cfg.layers || cfg.final_projection) {
      total += cfg.projection * 2 * h + cfg.projection;
      in = cfg.projection;
    } else {
      in = 2 * h;
    }
  }
  return total;
}

}  // namespace strforge
