#include "strforge/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace strforge {

namespace {

constexpr char kMagic[8] = {'S', 'T', 'R', 'F', 'C', 'K', 'P', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void round_all(std::span<double> v) {
  for (auto& x : v) x = static_cast<double>(static_cast<float>(x));
}

struct Entry {
  std::string name;
  Shape shape;
  std::vector<double>* values;
};

// Flat view of everything persisted: parameters, then running moments.
std::vector<Entry> entries(ParamStore& store) {
  std::vector<Entry> out;
  for (auto& p : store.params()) {
    out.push_back({p.name, p.value.shape(), &p.value.impl()->data});
  }
  for (auto& [name, _] : store.bn_states()) {
    auto& st = store.batchnorm_state(name);
    out.push_back({name + ".running_mean", {st.running_mean.size()}, &st.running_mean});
    out.push_back({name + ".running_var", {st.running_var.size()}, &st.running_var});
  }
  return out;
}

std::pair<nlohmann::json, std::vector<float>> read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint64_t header_len = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&header_len), sizeof header_len);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw DataError("not a checkpoint: " + path.string());
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw DataError("truncated checkpoint header in " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad checkpoint header in " + path.string() + ": " + e.what());
  }
  std::vector<float> payload;
  float f = 0;
  while (in.read(reinterpret_cast<char*>(&f), sizeof f)) payload.push_back(f);
  return {doc, payload};
}

}  // namespace

Tensor ParamStore::add(const std::string& name, Shape shape, InitKind init, std::size_t fan_in) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name " + name);
  Tensor t = Tensor::zeros(std::move(shape), true);
  index_[name] = params_.size();
  params_.push_back({name, t, init, fan_in});
  return t;
}

BatchNormState& ParamStore::batchnorm_state(const std::string& name) { return bn_[name]; }

const Param& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter " + name);
  return params_[it->second];
}

std::size_t ParamStore::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

void ParamStore::round_to_f32() {
  for (auto& p : params_) round_all(p.value.mutable_data());
  for (auto& [_, st] : bn_) {
    round_all(st.running_mean);
    round_all(st.running_var);
  }
}

void he_init(ParamStore& store, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& p : store.params()) {
    auto v = p.value.mutable_data();
    switch (p.init) {
      case InitKind::He: {
        if (p.fan_in == 0) throw ConfigError("parameter " + p.name + " has no fan-in");
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(p.fan_in)));
        for (auto& x : v) x = dist(rng);
        break;
      }
      case InitKind::Zero:
        std::fill(v.begin(), v.end(), 0.0);
        break;
      case InitKind::One:
        std::fill(v.begin(), v.end(), 1.0);
        break;
      case InitKind::LstmBias: {
        std::fill(v.begin(), v.end(), 0.0);
        const std::size_t h = v.size() / 4;
        std::fill(v.begin() + static_cast<long>(h), v.begin() + static_cast<long>(2 * h), 1.0);
        break;
      }
      case InitKind::Fixed:
        break;
    }
  }
  store.round_to_f32();
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store, const nlohmann::json& meta) {
  auto& mutable_store = const_cast<ParamStore&>(store);
  nlohmann::json tensors = nlohmann::json::array();
  std::vector<float> payload;
  for (const auto& e : entries(mutable_store)) {
    tensors.push_back({{"name", e.name}, {"shape", e.shape}, {"offset", payload.size()}});
    for (double x : *e.values) payload.push_back(static_cast<float>(x));
  }
  nlohmann::json bn_flags = nlohmann::json::object();
  for (const auto& [name, st] : store.bn_states()) bn_flags[name] = st.initialized;
  nlohmann::json doc{{"tensors", tensors}, {"batchnorm_initialized", bn_flags}, {"meta", meta}};
  const std::string header = doc.dump();
  const std::uint64_t len = header.size();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(kMagic, 8);
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

nlohmann::json load_checkpoint(const std::filesystem::path& path, ParamStore& store) {
  auto [doc, payload] = read_container(path);
  std::map<std::string, nlohmann::json> by_name;
  for (const auto& t : doc.at("tensors")) by_name[t.at("name").get<std::string>()] = t;
  for (auto& e : entries(store)) {
    auto it = by_name.find(e.name);
    if (it == by_name.end()) throw DataError("checkpoint lacks tensor " + e.name);
    const auto shape = it->second.at("shape").get<Shape>();
    const auto offset = it->second.at("offset").get<std::size_t>();
    const bool bn_stat = e.name.ends_with(".running_mean") || e.name.ends_with(".running_var");
    if (!bn_stat && shape != e.shape) {
      throw DataError("checkpoint shape " + shape_str(shape) + " for " + e.name + ", model has " + shape_str(e.shape));
    }
    const std::size_t n = shape_numel(shape);
    if (offset + n > payload.size()) throw DataError("checkpoint payload too short for " + e.name);
    e.values->assign(payload.begin() + static_cast<long>(offset), payload.begin() + static_cast<long>(offset + n));
  }
  const auto flags = doc.value("batchnorm_initialized", nlohmann::json::object());
  for (auto& [name, _] : store.bn_states()) {
    auto& st = store.batchnorm_state(name);
    st.initialized = flags.value(name, false);
  }
  return doc.value("meta", nlohmann::json::object());
}

nlohmann::json read_checkpoint_meta(const std::filesystem::path& path) {
  return read_container(path).first.value("meta", nlohmann::json::object());
}

}  // namespace strforge
