#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "strforge/ops.hpp"

namespace strforge {

/// How a parameter is initialised by `he_init`.
enum class InitKind {
  He,        // Normal(0, 2 / fan_in)
  Zero,
  One,
  LstmBias,  // zero except the forget-gate quarter, which is 1
  Fixed,     // left as set by the builder
};

struct Param {
  std::string name;
  Tensor value;
  InitKind init = InitKind::Zero;
  std::size_t fan_in = 0;
};

/// Named, insertion-ordered trainable parameters plus batch-norm running
/// moments. Names are unique; the order fixes the checkpoint layout.
class ParamStore {
 public:
  Tensor add(const std::string& name, Shape shape, InitKind init, std::size_t fan_in = 0);
  BatchNormState& batchnorm_state(const std::string& name);

  const std::vector<Param>& params() const { return params_; }
  std::vector<Param>& params() { return params_; }
  const std::map<std::string, BatchNormState>& bn_states() const { return bn_; }
  const Param& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t count() const;
  void zero_grad();
  /// Rounds every value and running moment to the nearest float32 so the
  /// checkpoint container stores the live state exactly.
  void round_to_f32();

 private:
  std::vector<Param> params_;
  std::map<std::string, std::size_t> index_;
  std::map<std::string, BatchNormState> bn_;
};

/// He initialisation of every parameter according to its InitKind.
void he_init(ParamStore& store, std::uint64_t seed);

/// Container: 8-byte magic, u64 little-endian header length, JSON header
/// {"tensors": [{name, shape, offset}], "meta": {...}}, then little-endian
/// float32 payload. Offsets count floats.
void save_checkpoint(const std::filesystem::path& path, const ParamStore& store,
                     const nlohmann::json& meta = nlohmann::json::object());
/// Loads values into an already-built store with matching names and shapes.
nlohmann::json load_checkpoint(const std::filesystem::path& path, ParamStore& store);
nlohmann::json read_checkpoint_meta(const std::filesystem::path& path);

}  // namespace strforge
