#pragma once

#include <string>
#include <vector>

#include "strforge/params.hpp"

namespace strforge {

/// Runs one LSTM over V [N, I, D] from zero state; returns hidden states
/// [N, I, H] in input time order. `reverse` scans from the last step.
Tensor lstm_sequence(const Tensor& V, const LstmWeights& w, bool reverse);

/// Forward and backward LSTMs, states concatenated to [N, I, 2H].
Tensor bidirectional_layer(const Tensor& V, const LstmWeights& fwd, const LstmWeights& bwd);

struct BiLstmConfig {
  std::size_t input = 512;
  std::size_t hidden = 256;
  std::size_t projection = 256;
  std::size_t layers = 2;
  /// Project after the last layer too (width `projection`), else emit 2H.
  bool final_projection = true;
};

/// Stacked bidirectional LSTM with an FC projection after each layer.
class BiLstm {
 public:
  BiLstm(const BiLstmConfig& cfg, ParamStore& store, const std::string& prefix);

  /// V [N, I, D] -> H [N, I, output_width()].
  Tensor forward(const Tensor& V) const;
  std::size_t output_width() const;
  const BiLstmConfig& config() const { return cfg_; }

 private:
  struct Layer {
    LstmWeights fwd, bwd;
    Tensor proj_w, proj_b;  // undefined when not projected
  };
  BiLstmConfig cfg_;
  std::vector<Layer> layers_;
};

/// Trainable parameter count of a BiLstm with this configuration.
std::size_t bilstm_param_count(const BiLstmConfig& cfg);

/// H = V.
inline Tensor identity_seq(const Tensor& V) { return V; }

}  // namespace strforge
