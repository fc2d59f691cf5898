#include "strforge/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <thread>

#include "strforge/evalkit.hpp"

namespace strforge {

namespace {

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

const char* trans_name(TransKind k) { return k == TransKind::Tps ? "TPS" : "None"; }
const char* feat_name(FeatKind k) {
  switch (k) {
    case FeatKind::Vgg: return "VGG";
    case FeatKind::Rcnn: return "RCNN";
    case FeatKind::ResNet: return "ResNet";
  }
  return "?";
}
const char* seq_name(SeqKind k) { return k == SeqKind::BiLstm ? "BiLSTM" : "None"; }
const char* pred_name(PredKind k) { return k == PredKind::Attn ? "Attn" : "CTC"; }

ArchGraph feature_graph(const PipelineConfig& cfg) {
  switch (cfg.feat) {
    case FeatKind::Vgg: return build_vgg(cfg.scale);
    case FeatKind::Rcnn: return build_rcnn(cfg.scale);
    case FeatKind::ResNet: return build_resnet(cfg.scale);
  }
  throw ConfigError("unknown feature extractor");
}

struct Snapshot {
  std::vector<std::vector<double>> values;
  std::map<std::string, BatchNormState> bn;
};

Snapshot take_snapshot(const ParamStore& store) {
  Snapshot s;
  for (const auto& p : store.params()) {
    auto d = p.value.data();
    s.values.emplace_back(d.begin(), d.end());
  }
  s.bn = store.bn_states();
  return s;
}

void restore_snapshot(ParamStore& store, const Snapshot& s) {
  auto& params = store.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto v = params[i].value.mutable_data();
    std::copy(s.values[i].begin(), s.values[i].end(), v.begin());
  }
  for (const auto& [name, st] : s.bn) store.batchnorm_state(name) = st;
}

}  // namespace

// ---- configuration -----------------------------------------------------------

std::string PipelineConfig::name() const {
  return std::string(trans_name(trans)) + "-" + feat_name(feat) + "-" + seq_name(seq) + "-" + pred_name(pred);
}

std::size_t PipelineConfig::id() const {
  return static_cast<std::size_t>(trans) * 12 + static_cast<std::size_t>(feat) * 4 + static_cast<std::size_t>(seq) * 2 +
         static_cast<std::size_t>(pred) + 1;
}

const std::vector<std::pair<std::string, std::string>>& PipelineConfig::presets() {
  static const std::vector<std::pair<std::string, std::string>> p{
      {"CRNN", "None-VGG-BiLSTM-CTC"},     {"RARE", "TPS-VGG-BiLSTM-Attn"}, {"GRCNN", "None-RCNN-BiLSTM-CTC"},
      {"STAR-Net", "TPS-ResNet-BiLSTM-CTC"}, {"R2AM", "None-RCNN-None-Attn"}, {"Rosetta", "None-ResNet-None-CTC"}};
  return p;
}

PipelineConfig PipelineConfig::parse(const std::string& text) {
  for (const auto& [preset, layout] : presets())
    if (lower(preset) == lower(text)) return parse(layout);

  std::vector<std::string> tok;
  std::stringstream ss(text);
  for (std::string t; std::getline(ss, t, '-');) tok.push_back(lower(t));
  if (tok.size() != 4) throw ConfigError("pipeline '" + text + "' is not Trans-Feat-Seq-Pred or a preset name");
  auto bad = [&](const std::string& stage, const std::string& t) {
    return ConfigError("unknown " + stage + " module '" + t + "' in '" + text + "'");
  };
  PipelineConfig c;
  if (tok[0] == "none") c.trans = TransKind::None;
  else if (tok[0] == "tps") c.trans = TransKind::Tps;
  else throw bad("transformation", tok[0]);
  if (tok[1] == "vgg") c.feat = FeatKind::Vgg;
  else if (tok[1] == "rcnn") c.feat = FeatKind::Rcnn;
  else if (tok[1] == "resnet") c.feat = FeatKind::ResNet;
  else throw bad("feature", tok[1]);
  if (tok[2] == "none") c.seq = SeqKind::None;
  else if (tok[2] == "bilstm") c.seq = SeqKind::BiLstm;
  else throw bad("sequence", tok[2]);
  if (tok[3] == "ctc") c.pred = PredKind::Ctc;
  else if (tok[3] == "attn") c.pred = PredKind::Attn;
  else throw bad("prediction", tok[3]);
  return c;
}

std::vector<PipelineConfig> PipelineConfig::all_combinations() {
  std::vector<PipelineConfig> out;
  for (auto t : {TransKind::None, TransKind::Tps})
    for (auto f : {FeatKind::Vgg, FeatKind::Rcnn, FeatKind::ResNet})
      for (auto s : {SeqKind::None, SeqKind::BiLstm})
        for (auto p : {PredKind::Ctc, PredKind::Attn}) {
          PipelineConfig c;
          c.trans = t;
          c.feat = f;
          c.seq = s;
          c.pred = p;
          out.push_back(c);
        }
  return out;
}

nlohmann::json PipelineConfig::to_json() const {
  return {{"pipeline", name()}, {"scale", scale}, {"fiducials", fiducials}, {"seed", seed}};
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j) {
  try {
    PipelineConfig c = parse(j.at("pipeline").get<std::string>());
    c.scale = j.value("scale", 1.0);
    c.fiducials = j.value("fiducials", std::size_t{20});
    c.seed = j.value("seed", std::uint64_t{0});
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad pipeline description: ") + e.what());
  }
}

// ---- data --------------------------------------------------------------------

Tensor make_batch(const Dataset& ds, const std::vector<std::size_t>& indices) {
  const std::size_t px = kImageH * kImageW;
  std::vector<double> v;
  v.reserve(indices.size() * px);
  for (auto i : indices) {
    const auto& p = ds.at(i).pixels;
    if (p.size() != px) throw ShapeError("sample " + std::to_string(i) + " has " + std::to_string(p.size()) + " pixels");
    v.insert(v.end(), p.begin(), p.end());
  }
  return Tensor::from({indices.size(), 1, kImageH, kImageW}, std::move(v));
}

std::vector<Label> batch_labels(const Dataset& ds, const std::vector<std::size_t>& indices) {
  std::vector<Label> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(LabelCodec::encode(normalize_label(ds.at(i).label)));
  return out;
}

// ---- model -------------------------------------------------------------------

std::array<std::size_t, 4> stage_param_counts(const PipelineConfig& cfg) {
  std::array<std::size_t, 4> n{};
  if (cfg.trans == TransKind::Tps) n[0] = param_count(build_localization_net(cfg.fiducials, cfg.scale));
  const ArchGraph g = feature_graph(cfg);
  n[1] = param_count(g);
  std::size_t width = infer_shapes(g).back().output.at(0);
  const std::size_t h = scale_channels(256, cfg.scale);
  if (cfg.seq == SeqKind::BiLstm) {
    n[2] = bilstm_param_count(BiLstmConfig{width, h, h, 2, true});
    width = h;
  }
  const std::size_t k = LabelCodec::kClasses;
  n[3] = cfg.pred == PredKind::Ctc ? k * width + k
                                   : attention_param_count(AttentionConfig{width, h, h, k, LabelCodec::kSpecial});
  return n;
}

StrModel::StrModel(const PipelineConfig& cfg) : cfg_(cfg) {
  std::size_t before = 0;
  auto mark = [&](std::size_t stage) {
    stage_params_[stage] = store_.count() - before;
    before = store_.count();
  };
  if (cfg.trans == TransKind::Tps) {
    trans_ = std::make_unique<TpsTransform>(cfg.fiducials, cfg.scale, store_, "trans", kImageH, kImageW);
  }
  mark(0);
  ArchGraph g = feature_graph(cfg);
  feat_channels_ = infer_shapes(g).back().output.at(0);
  feat_ = std::make_unique<Network>(g, store_, "feat");
  mark(1);
  seq_width_ = feat_channels_;
  if (cfg.seq == SeqKind::BiLstm) {
    const std::size_t h = scale_channels(256, cfg.scale);
    seq_ = std::make_unique<BiLstm>(BiLstmConfig{feat_channels_, h, h, 2, true}, store_, "seq");
    seq_width_ = seq_->output_width();
  }
  mark(2);
  if (cfg.pred == PredKind::Ctc) {
    ctc_ = std::make_unique<CtcPredictor>(seq_width_, store_, "pred");
  } else {
    const std::size_t h = scale_channels(256, cfg.scale);
    attn_ = std::make_unique<AttentionPredictor>(
        AttentionConfig{seq_width_, h, h, LabelCodec::kClasses, LabelCodec::kSpecial}, store_, "pred");
  }
  mark(3);
  he_init(store_, cfg.seed);
}

Tensor StrModel::sequence(const Tensor& x, BatchNormMode mode) const {
  if (x.rank() != 4 || x.dim(1) != 1) throw ShapeError("images must be [N, 1, H, W], got " + shape_str(x.shape()));
  Tensor img = trans_ ? trans_->forward(x, mode) : x;
  Tensor f = feat_->forward(img, mode);  // [N, C, H', W']
  const std::size_t n = f.dim(0), c = f.dim(1), h = f.dim(2), w = f.dim(3);
  // Columns become time steps; a remaining height is averaged out.
  Tensor cols = h == 1 ? reshape(f, {n, c, w}) : scale(sum_axis(f, 2), 1.0 / static_cast<double>(h));
  Tensor V = permute(cols, {0, 2, 1});
  return seq_ ? seq_->forward(V) : identity_seq(V);
}

Tensor StrModel::loss(const Tensor& x, const std::vector<Label>& labels, BatchNormMode mode) const {
  Tensor H = sequence(x, mode);
  return ctc_ ? ctc_->loss(H, labels) : attn_->loss(H, labels);
}

std::vector<Label> StrModel::predict(const Tensor& x, BatchNormMode mode) const {
  NoGradGuard guard;
  Tensor H = sequence(x, mode);
  return ctc_ ? ctc_->decode(H) : attn_->decode(H);
}

std::vector<std::string> StrModel::predict_text(const Tensor& x, BatchNormMode mode) const {
  std::vector<std::string> out;
  for (const auto& l : predict(x, mode)) out.push_back(LabelCodec::decode(l));
  return out;
}

std::uint64_t StrModel::flops() const {
  std::uint64_t total = flop_count(feat_->graph());
  if (trans_) total += flop_count(build_localization_net(cfg_.fiducials, cfg_.scale));
  const auto out = infer_shapes(feat_->graph()).back().output;
  const std::uint64_t steps = out.at(2);
  std::uint64_t width = feat_channels_;
  if (seq_) {
    const auto& sc = seq_->config();
    for (std::size_t l = 0; l < sc.layers; ++l) {
      total += steps * 2 * 2 * 4 * sc.hidden * (width + sc.hidden);
      total += steps * 2 * 2 * sc.hidden * sc.projection;
      width = sc.projection;
    }
  }
  const std::uint64_t k = LabelCodec::kClasses;
  if (ctc_) {
    total += steps * 2 * width * k;
  } else {
    // Per decode step: scores over all columns, the cell and the classifier;
    // counted for as many steps as columns.
    const auto& ac = attn_->config();
    const std::uint64_t per = steps * 2 * ac.attention * (ac.input + 1) + 2 * ac.attention * ac.hidden +
                              2 * 4 * ac.hidden * (k + ac.input + ac.hidden) + 2 * k * ac.hidden;
    total += steps * per;
  }
  return total;
}

nlohmann::json StrModel::describe() const {
  const auto out = infer_shapes(feat_->graph()).back().output;
  return {{"pipeline", cfg_.name()},
          {"id", cfg_.id()},
          {"scale", cfg_.scale},
          {"params", param_count()},
          {"stage_params",
           {{"trans", stage_params_[0]}, {"feat", stage_params_[1]}, {"seq", stage_params_[2]}, {"pred", stage_params_[3]}}},
          {"flops", flops()},
          {"sequence_length", out.at(2)},
          {"sequence_width", seq_width_},
          {"feature", strforge::describe(feat_->graph())}};
}

Tensor nll_objective(const StrModel& model, const Tensor& x, const std::vector<Label>& labels) {
  return model.loss(x, labels, BatchNormMode::Train);
}

// ---- optimisation ------------------------------------------------------------

void adadelta_update(std::span<double> x, std::span<const double> g, std::span<double> eg2, std::span<double> edx2,
                     double rho, double eps, double lr) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    eg2[i] = rho * eg2[i] + (1.0 - rho) * g[i] * g[i];
    const double dx = -std::sqrt(edx2[i] + eps) / std::sqrt(eg2[i] + eps) * g[i];
    edx2[i] = rho * edx2[i] + (1.0 - rho) * dx * dx;
    x[i] += lr * dx;
  }
}

void AdaDelta::step(ParamStore& store) {
  auto& params = store.params();
  if (eg2_.size() != params.size()) {
    eg2_.resize(params.size());
    edx2_.resize(params.size());
  }
  std::vector<double> zeros;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& v = params[i].value;
    const std::size_t n = v.numel();
    if (eg2_[i].size() != n) {
      eg2_[i].assign(n, 0.0);
      edx2_[i].assign(n, 0.0);
    }
    std::span<const double> g;
    if (v.has_grad()) {
      g = v.grad();
    } else {
      zeros.assign(n, 0.0);
      g = zeros;
    }
    adadelta_update(v.mutable_data(), g, eg2_[i], edx2_[i], rho_, eps_, lr_);
  }
  // Keep the live weights representable in the float32 checkpoint.
  store.round_to_f32();
}

double clip_gradients(ParamStore& store, double magnitude, bool per_parameter) {
  if (!(magnitude > 0.0)) throw ConfigError("clip magnitude must be positive");
  double total = 0.0;
  std::vector<double> norms;
  for (auto& p : store.params()) {
    double s = 0.0;
    if (p.value.has_grad())
      for (double g : p.value.grad()) s += g * g;
    norms.push_back(std::sqrt(s));
    total += s;
  }
  total = std::sqrt(total);
  auto& params = store.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].value.has_grad()) continue;
    const double norm = per_parameter ? norms[i] : total;
    if (norm <= magnitude) continue;
    const double f = magnitude / norm;
    for (double& g : params[i].value.mutable_grad()) g *= f;
  }
  return total;
}

nlohmann::json TrainRecipe::to_json() const {
  nlohmann::json j{{"rho", rho},         {"eps", eps},           {"lr", lr},
                   {"clip", clip},       {"per_parameter_clip", per_parameter_clip},
                   {"batch", batch},     {"iterations", iterations},
                   {"val_every", val_every}, {"fraction", fraction}, {"seed", seed}};
  j["target_accuracy"] = target_accuracy ? nlohmann::json(*target_accuracy) : nlohmann::json();
  return j;
}

// ---- training ----------------------------------------------------------------

std::vector<std::string> predict_dataset(const StrModel& model, const Dataset& ds, std::size_t batch,
                                         std::size_t threads) {
  std::vector<std::string> out(ds.size());
  if (ds.empty()) return out;
  batch = std::max<std::size_t>(batch, 1);
  auto run = [&](std::size_t begin, std::size_t end) {
    for (std::size_t b = begin; b < end; b += batch) {
      std::vector<std::size_t> idx(std::min(batch, end - b));
      std::iota(idx.begin(), idx.end(), b);
      auto texts = model.predict_text(make_batch(ds, idx));
      std::copy(texts.begin(), texts.end(), out.begin() + static_cast<std::ptrdiff_t>(b));
    }
  };
  threads = std::clamp<std::size_t>(threads, 1, ds.size());
  if (threads == 1) {
    run(0, ds.size());
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  const std::size_t shard = (ds.size() + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t b = t * shard, e = std::min(ds.size(), b + shard);
    pool.emplace_back([&, t, b, e] {
      try {
        if (b < e) run(b, e);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

double evaluate_accuracy(const StrModel& model, const Dataset& ds, std::size_t batch, std::size_t threads) {
  std::vector<std::string> gts;
  for (const auto& s : ds) gts.push_back(s.label);
  return word_accuracy(predict_dataset(model, ds, batch, threads), gts);
}

TrainResult train(StrModel& model, const TrainRecipe& recipe, const Dataset& train_set, const Dataset& val_set,
                  const std::filesystem::path& out_dir) {
  if (train_set.empty()) throw DataError("empty training set");
  if (recipe.batch == 0 || recipe.val_every == 0) throw ConfigError("batch and validation interval must be positive");
  std::ofstream log_file;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    log_file.open(out_dir / "log.csv");
    if (!log_file) throw DataError("cannot write " + (out_dir / "log.csv").string());
    log_file << "step,loss,val_accuracy\n" << std::setprecision(10);
  }

  ParamStore& store = model.store();
  AdaDelta opt(recipe.rho, recipe.eps, recipe.lr);
  std::mt19937_64 rng(recipe.seed);
  const std::size_t n = train_set.size(), batch = std::min(recipe.batch, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::size_t pos = n;

  TrainResult result;
  Snapshot best;
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  for (std::size_t step = 1; step <= recipe.iterations; ++step) {
    if (pos + batch > n) {
      std::shuffle(order.begin(), order.end(), rng);
      pos = 0;
    }
    std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(pos),
                                 order.begin() + static_cast<std::ptrdiff_t>(pos + batch));
    pos += batch;

    store.zero_grad();
    Tensor loss = model.loss(make_batch(train_set, idx), batch_labels(train_set, idx), BatchNormMode::Train);
    const double value = loss.item();
    if (!std::isfinite(value)) throw StateError("non-finite training loss at step " + std::to_string(step));
    loss.backward();
    if (recipe.per_parameter_clip) clip_gradients(store, recipe.clip, true);
    else clip_gradients(store, recipe.clip, false);
    opt.step(store);
    loss_sum += value;
    ++loss_count;
    result.steps = step;

    if (step % recipe.val_every != 0 && step != recipe.iterations) continue;
    const double acc = evaluate_accuracy(model, val_set, 64, recipe.threads);
    result.log.push_back({step, loss_sum / static_cast<double>(loss_count), acc});
    if (log_file.is_open()) log_file << step << ',' << result.log.back().loss << ',' << acc << '\n' << std::flush;
    loss_sum = 0.0;
    loss_count = 0;
    if (acc > result.best_accuracy) {
      result.best_accuracy = acc;
      result.best_step = step;
      best = take_snapshot(store);
      if (!out_dir.empty()) save_model(model, out_dir / "best.ckpt", {{"step", step}, {"val_accuracy", acc}});
    }
    if (recipe.target_accuracy && acc >= *recipe.target_accuracy) {
      result.early_stopped = true;
      break;
    }
  }
  if (!best.values.empty()) restore_snapshot(store, best);
  return result;
}

TrainResult fine_tune(StrModel& model, TrainRecipe recipe, const Dataset& train_set, const Dataset& val_set,
                      std::size_t epochs, const std::filesystem::path& out_dir) {
  if (epochs == 0) throw ConfigError("fine-tuning needs at least one epoch");
  const std::size_t batch = std::min(std::max<std::size_t>(recipe.batch, 1), std::max<std::size_t>(train_set.size(), 1));
  recipe.iterations = epochs * ((train_set.size() + batch - 1) / batch);
  return train(model, recipe, train_set, val_set, out_dir);
}

void save_model(const StrModel& model, const std::filesystem::path& path, nlohmann::json extra) {
  extra["config"] = model.config().to_json();
  save_checkpoint(path, model.store(), extra);
}

std::unique_ptr<StrModel> load_model(const std::filesystem::path& path) {
  const auto meta = read_checkpoint_meta(path);
  if (!meta.contains("config")) throw DataError("checkpoint " + path.string() + " has no pipeline description");
  auto model = std::make_unique<StrModel>(PipelineConfig::from_json(meta["config"]));
  load_checkpoint(path, model->store());
  return model;
}

Dataset fraction_subset(const Dataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("dataset fraction must lie in (0, 1]");
  std::vector<std::size_t> perm(ds.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(ds.size()) - 1e-9));
  perm.resize(std::min(k, ds.size()));
  std::sort(perm.begin(), perm.end());
  Dataset out;
  for (auto i : perm) out.push_back(ds[i]);
  return out;
}

std::vector<SweepRow> fraction_sweep(const PipelineConfig& cfg, const TrainRecipe& recipe, const Dataset& train_set,
                                     const Dataset& val_set, const std::vector<double>& fractions) {
  std::vector<SweepRow> rows;
  for (double f : fractions) {
    Dataset subset = fraction_subset(train_set, f, recipe.seed);
    StrModel model(cfg);
    TrainResult r = train(model, recipe, subset, val_set);
    rows.push_back({f, subset.size(), r.best_accuracy, r.best_step});
  }
  return rows;
}

// ---- synthetic data ----------------------------------------------------------

const std::array<std::uint8_t, 7>& glyph(char c) {
  static const std::array<std::array<std::uint8_t, 7>, 36> font{{
      {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E},  // 0
      {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E},
      {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F},
      {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E},
      {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02},
      {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E},
      {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E},
      {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},
      {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E},
      {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C},  // 9
      {0x0E, 0x11, 0x11, 0x11, 0x1F, 0x11, 0x11},  // a
      {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E},
      {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E},
      {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C},
      {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F},
      {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10},
      {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F},
      {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11},
      {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E},
      {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C},
      {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11},
      {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F},
      {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11},
      {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11},
      {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E},
      {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10},
      {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D},
      {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11},
      {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E},
      {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04},
      {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E},
      {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04},
      {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A},
      {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11},
      {0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04},
      {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F},  // z
  }};
  const auto pos = LabelCodec::kAlphabet.find(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (pos == std::string_view::npos) throw CodecError("no glyph for '" + std::string(1, c) + "'");
  return font[pos];
}

Sample render_text(const std::string& text, std::mt19937_64& rng, double noise) {
  const std::size_t len = text.size();
  std::vector<std::size_t> fits;
  for (std::size_t s : {2u, 3u})
    if (len * 6 * s - s <= kImageW - 4 && 7 * s <= kImageH - 2) fits.push_back(s);
  if (fits.empty() && len * 6 - 1 <= kImageW - 4) fits.push_back(1);
  if (fits.empty() || len == 0) throw ConfigError("cannot render '" + text + "' into 32x100");

  auto uniform_int = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  const std::size_t s = fits[uniform_int(0, fits.size() - 1)];
  const std::size_t w = len * 6 * s - s, h = 7 * s;
  const std::size_t x0 = uniform_int(2, kImageW - 2 - w), y0 = uniform_int(1, kImageH - 1 - h);
  const double bg = std::uniform_real_distribution<double>(-1.0, -0.5)(rng);
  const double ink = std::uniform_real_distribution<double>(0.5, 1.0)(rng);

  Sample out{std::vector<double>(kImageH * kImageW, bg), text};
  for (std::size_t i = 0; i < len; ++i) {
    const auto& rows = glyph(text[i]);
    for (std::size_t r = 0; r < 7; ++r)
      for (std::size_t c = 0; c < 5; ++c) {
        if (!((rows[r] >> (4 - c)) & 1)) continue;
        for (std::size_t dy = 0; dy < s; ++dy)
          for (std::size_t dx = 0; dx < s; ++dx)
            out.pixels[(y0 + r * s + dy) * kImageW + x0 + i * 6 * s + c * s + dx] = ink;
      }
  }
  if (noise > 0.0) {
    std::normal_distribution<double> nd(0.0, noise);
    for (auto& p : out.pixels) p = std::clamp(p + nd(rng), -1.0, 1.0);
  }
  return out;
}

Dataset synth_toydata(std::size_t n, std::size_t max_len, std::uint64_t seed, std::size_t min_len) {
  if (min_len == 0 || max_len < min_len) throw ConfigError("need 1 <= min_len <= max_len");
  if (max_len > 16) throw ConfigError("synthetic strings are limited to 16 characters");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> len_dist(min_len, max_len), sym(0, LabelCodec::kAlphabet.size() - 1);
  Dataset ds;
  ds.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::string text(len_dist(rng), ' ');
    for (auto& c : text) c = LabelCodec::kAlphabet[sym(rng)];
    ds.push_back(render_text(text, rng));
  }
  return ds;
}

void write_pgm(const std::filesystem::path& path, const Sample& s) {
  if (s.pixels.size() != kImageH * kImageW) throw ShapeError("PGM writer expects a 32x100 sample");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P5\n" << kImageW << ' ' << kImageH << "\n255\n";
  for (double p : s.pixels) {
    const long v = std::lround((std::clamp(p, -1.0, 1.0) + 1.0) * 127.5);
    out.put(static_cast<char>(static_cast<unsigned char>(v)));
  }
}

Sample read_pgm(const std::filesystem::path& path, const std::string& label) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  auto token = [&]() {
    std::string t;
    while (in) {
      const int c = in.get();
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
      } else if (std::isspace(c)) {
        if (!t.empty()) break;
      } else if (c != EOF) {
        t.push_back(static_cast<char>(c));
      }
    }
    return t;
  };
  if (token() != "P5") throw DataError(path.string() + " is not a binary PGM");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw DataError("bad PGM header in " + path.string());
  }
  if (w == 0 || h == 0 || maxval == 0 || maxval > 255) throw DataError("unsupported PGM geometry in " + path.string());
  std::vector<unsigned char> raw(w * h);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw DataError("truncated PGM " + path.string());
  auto at = [&](std::size_t y, std::size_t x) { return static_cast<double>(raw[y * w + x]) / static_cast<double>(maxval) * 2.0 - 1.0; };

  Sample s{std::vector<double>(kImageH * kImageW), label};
  for (std::size_t y = 0; y < kImageH; ++y)
    for (std::size_t x = 0; x < kImageW; ++x) {
      const double sy = h == 1 ? 0.0 : static_cast<double>(y) * static_cast<double>(h - 1) / (kImageH - 1);
      const double sx = w == 1 ? 0.0 : static_cast<double>(x) * static_cast<double>(w - 1) / (kImageW - 1);
      const auto y0 = static_cast<std::size_t>(sy), x0 = static_cast<std::size_t>(sx);
      const std::size_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
      const double fy = sy - static_cast<double>(y0), fx = sx - static_cast<double>(x0);
      s.pixels[y * kImageW + x] = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) +
                                  fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
    }
  return s;
}

std::size_t worker_threads() {
  const char* env = std::getenv("STRFORGE_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) throw ConfigError("STRFORGE_THREADS must be a positive integer");
  return static_cast<std::size_t>(v);
}

}  // namespace strforge
