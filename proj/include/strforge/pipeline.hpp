#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "strforge/arch.hpp"
#include "strforge/predict.hpp"
#include "strforge/seqmodel.hpp"
#include "strforge/tps.hpp"

namespace strforge {

enum class TransKind { None, Tps };
enum class FeatKind { Vgg, Rcnn, ResNet };
enum class SeqKind { None, BiLstm };
enum class PredKind { Ctc, Attn };

struct PipelineConfig {
  TransKind trans = TransKind::None;
  FeatKind feat = FeatKind::Vgg;
  SeqKind seq = SeqKind::None;
  PredKind pred = PredKind::Ctc;
  double scale = 1.0;
  std::size_t fiducials = 20;
  std::uint64_t seed = 0;

  /// "Trans-Feat-Seq-Pred", e.g. "TPS-ResNet-BiLSTM-Attn".
  std::string name() const;
  /// Row number 1..24 in the order None<TPS, VGG<RCNN<ResNet, None<BiLSTM, CTC<Attn.
  std::size_t id() const;
  /// Accepts a four-token string (tokens case-insensitive) or a preset name.
  /// Throws ConfigError otherwise.
  static PipelineConfig parse(const std::string& text);
  static std::vector<PipelineConfig> all_combinations();
  static const std::vector<std::pair<std::string, std::string>>& presets();

  nlohmann::json to_json() const;
  static PipelineConfig from_json(const nlohmann::json& j);
  bool same_layout(const PipelineConfig& o) const {
    return trans == o.trans && feat == o.feat && seq == o.seq && pred == o.pred;
  }
};

inline constexpr std::size_t kImageH = 32;
inline constexpr std::size_t kImageW = 100;

/// Grayscale 32x100 image in [-1, 1], row-major, with its text label.
struct Sample {
  std::vector<double> pixels;
  std::string label;
};
using Dataset = std::vector<Sample>;

/// [N, 1, 32, 100] batch of the selected samples.
Tensor make_batch(const Dataset& ds, const std::vector<std::size_t>& indices);
std::vector<Label> batch_labels(const Dataset& ds, const std::vector<std::size_t>& indices);

/// The four stages wired together, with parameters in one store.
class StrModel {
 public:
  /// Builds the stages and runs he_init with cfg.seed.
  explicit StrModel(const PipelineConfig& cfg);
  StrModel(const StrModel&) = delete;
  StrModel& operator=(const StrModel&) = delete;

  const PipelineConfig& config() const { return cfg_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }

  /// Images [N, 1, 32, 100] -> contextual features H [N, I, D].
  Tensor sequence(const Tensor& x, BatchNormMode mode) const;
  /// Mean over the batch of -log p(label | image).
  Tensor loss(const Tensor& x, const std::vector<Label>& labels, BatchNormMode mode = BatchNormMode::Train) const;
  std::vector<Label> predict(const Tensor& x, BatchNormMode mode = BatchNormMode::Infer) const;
  std::vector<std::string> predict_text(const Tensor& x, BatchNormMode mode = BatchNormMode::Infer) const;

  /// Parameter count per stage ("trans", "feat", "seq", "pred").
  const std::array<std::size_t, 4>& stage_params() const { return stage_params_; }
  std::size_t param_count() const { return store_.count(); }
  /// Approximate forward FLOPs for one 32x100 image (2 x multiply-adds).
  std::uint64_t flops() const;
  nlohmann::json describe() const;

 private:
  PipelineConfig cfg_;
  ParamStore store_;
  std::unique_ptr<TpsTransform> trans_;
  std::unique_ptr<Network> feat_;
  std::unique_ptr<BiLstm> seq_;
  std::unique_ptr<CtcPredictor> ctc_;
  std::unique_ptr<AttentionPredictor> attn_;
  std::size_t feat_channels_ = 0;
  std::size_t seq_width_ = 0;
  std::array<std::size_t, 4> stage_params_{};
};

/// Per-stage parameter counts of the pipeline, computed from the layer
/// specifications without allocating anything. Equals StrModel::stage_params.
std::array<std::size_t, 4> stage_param_counts(const PipelineConfig& cfg);

/// Same as model.loss.
Tensor nll_objective(const StrModel& model, const Tensor& x, const std::vector<Label>& labels);

/// One AdaDelta update of x in place, with running averages eg2 and edx2.
void adadelta_update(std::span<double> x, std::span<const double> g, std::span<double> eg2, std::span<double> edx2,
                     double rho, double eps, double lr = 1.0);

class AdaDelta {
 public:
  explicit AdaDelta(double rho = 0.95, double eps = 1e-6, double lr = 1.0) : rho_(rho), eps_(eps), lr_(lr) {}
  /// Updates every parameter of the store from its gradient (absent = 0).
  void step(ParamStore& store);

 private:
  double rho_, eps_, lr_;
  std::vector<std::vector<double>> eg2_, edx2_;
};

/// Rescales gradients so their global L2 norm is at most `magnitude`, or
/// each parameter's norm when `per_parameter`. Returns the norm before
/// clipping (global).
double clip_gradients(ParamStore& store, double magnitude = 5.0, bool per_parameter = false);

struct TrainRecipe {
  double rho = 0.95;
  double eps = 1e-6;
  double lr = 1.0;
  double clip = 5.0;
  bool per_parameter_clip = false;
  std::size_t batch = 32;
  std::size_t iterations = 3000;
  std::size_t val_every = 200;
  double fraction = 1.0;
  std::uint64_t seed = 0;
  /// Stop at the first validation reaching this accuracy (percent).
  std::optional<double> target_accuracy;
  std::size_t threads = 1;  // validation workers

  nlohmann::json to_json() const;
};

struct LogRow {
  std::size_t step = 0;
  double loss = 0.0;  // mean training loss since the previous row
  double val_accuracy = 0.0;
};

struct TrainResult {
  std::size_t best_step = 0;
  double best_accuracy = -1.0;
  std::size_t steps = 0;
  bool early_stopped = false;
  std::vector<LogRow> log;
};

/// Word accuracy (percent) on `ds`, in inference mode; shards over `threads`.
double evaluate_accuracy(const StrModel& model, const Dataset& ds, std::size_t batch = 64, std::size_t threads = 1);
std::vector<std::string> predict_dataset(const StrModel& model, const Dataset& ds, std::size_t batch = 64,
                                         std::size_t threads = 1);

/// AdaDelta with clipping, validated every recipe.val_every steps and at the
/// end. The model finishes holding the best validated weights (earliest
/// step on ties). With `out_dir`, writes log.csv and best.ckpt there.
TrainResult train(StrModel& model, const TrainRecipe& recipe, const Dataset& train_set, const Dataset& val_set,
                  const std::filesystem::path& out_dir = {});

/// Continues training for `epochs` passes over `train_set`.
TrainResult fine_tune(StrModel& model, TrainRecipe recipe, const Dataset& train_set, const Dataset& val_set,
                      std::size_t epochs, const std::filesystem::path& out_dir = {});

void save_model(const StrModel& model, const std::filesystem::path& path, nlohmann::json extra = nlohmann::json::object());
std::unique_ptr<StrModel> load_model(const std::filesystem::path& path);

/// Subset of ceil(fraction * n) samples chosen by a seeded permutation,
/// returned in original order (fraction 1 is the identity).
Dataset fraction_subset(const Dataset& ds, double fraction, std::uint64_t seed);

struct SweepRow {
  double fraction = 0.0;
  std::size_t train_size = 0;
  double accuracy = 0.0;
  std::size_t best_step = 0;
};

std::vector<SweepRow> fraction_sweep(const PipelineConfig& cfg, const TrainRecipe& recipe, const Dataset& train_set,
                                     const Dataset& val_set, const std::vector<double>& fractions);

/// 5x7 dot glyph rows (low 5 bits, MSB = left column) for 0-9 and a-z.
const std::array<std::uint8_t, 7>& glyph(char c);

/// Renders `text` into a 32x100 image with random scale, offset, contrast
/// and noise.
Sample render_text(const std::string& text, std::mt19937_64& rng, double noise = 0.05);

/// n random strings of min_len..max_len symbols from "0-9a-z", rendered.
Dataset synth_toydata(std::size_t n, std::size_t max_len, std::uint64_t seed, std::size_t min_len = 1);

/// Binary PGM (P5, 8-bit) round trip; reading resizes to 32x100 bilinearly.
void write_pgm(const std::filesystem::path& path, const Sample& s);
Sample read_pgm(const std::filesystem::path& path, const std::string& label = {});

/// Worker count from STRFORGE_THREADS (default 1, at least 1).
std::size_t worker_threads();

}  // namespace strforge
