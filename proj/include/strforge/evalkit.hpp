#pragma once

#include <filesystem>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace strforge {

/// Lowercase, then drop everything outside [a-z0-9].
std::string normalize_label(std::string_view s);

/// Percentage of positions where the normalised strings agree.
double word_accuracy(const std::vector<std::string>& preds, const std::vector<std::string>& gts);

struct ManifestEntry {
  std::string image;
  std::string label;
  std::string dataset;
  std::string scene;
  std::optional<std::string> digest;
};
using Manifest = std::vector<ManifestEntry>;

/// IIIT, SVT, IC03, IC13, IC15, SP, CT, custom.
const std::vector<std::string>& known_datasets();

/// JSON lines with keys image, label, dataset, scene, digest (optional).
/// Throws DataError on malformed lines, unknown datasets or repeated images.
Manifest read_manifest(const std::filesystem::path& path);
Manifest parse_manifest(std::istream& in, const std::string& source = "manifest");
void write_manifest(const std::filesystem::path& path, const Manifest& m);

/// Evaluation subset sizes: IC03 {867, 860}, IC13 {1015, 857}, IC15
/// {2077, 1811}; the remaining datasets have one variant, their full size.
const std::vector<std::size_t>& benchmark_variants(const std::string& dataset);

struct FilterReport {
  std::string dataset;
  std::size_t variant = 0;
  std::size_t before = 0;      // entries of this dataset in the input
  std::size_t after_rules = 0;
  std::size_t after = 0;       // after the exclusion list, if any
  nlohmann::json to_json() const;
};

/// Keeps the entries of `dataset` that satisfy the variant's rules. The 860
/// and 1811 variants also drop entries whose image appears in `exclusion`;
/// without a list they throw ConfigError.
Manifest filter_benchmark(const Manifest& m, const std::string& dataset, std::size_t variant,
                          const Manifest* exclusion = nullptr, FilterReport* report = nullptr);

struct DuplicateReport {
  std::size_t scenes = 0;      // connected train/eval scene groups
  std::size_t word_boxes = 0;  // matched (train, eval) entry pairs
  std::size_t digest_matches = 0;
  std::size_t label_matches = 0;  // heuristic (scene, label) fallback
  std::vector<std::string> train_scenes;
  std::vector<std::size_t> train_duplicates;  // indices into the train manifest
  nlohmann::json to_json() const;
};

/// Pairs match on equal digests when both carry one, otherwise on equal
/// (scene, label).
DuplicateReport dedupe_scan(const Manifest& train, const Manifest& eval);
Manifest remove_duplicates(const Manifest& train, const DuplicateReport& report);

/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);
/// Fills missing digests from the image files (relative to `base`).
void fill_digests(Manifest& m, const std::filesystem::path& base);

/// Dataset name and its size in the unified evaluation set.
const std::vector<std::pair<std::string, std::size_t>>& unified_composition();
std::size_t unified_total();
bool is_regular(const std::string& dataset);

struct DatasetResult {
  std::string dataset;
  std::size_t variant = 0;
  std::size_t count = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
};

struct EvalRecord {
  std::string name;
  std::vector<DatasetResult> datasets;
  double total = 0.0;
  std::optional<double> regular, irregular;
  double time_ms = 0.0;
  double params_m = 0.0;
  std::optional<double> flops_g;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
};

/// Per-dataset accuracy of `predictions` (aligned with `m`), plus totals
/// weighted by the unified composition (custom datasets by their own size).
/// Counts that differ from the selected variant produce a warning.
EvalRecord unified_eval(const std::string& name, const Manifest& m, const std::vector<std::string>& predictions,
                        const std::map<std::string, std::size_t>& variants = {});

/// Totals from per-dataset accuracies alone, with composition weights.
EvalRecord aggregate_accuracies(const std::string& name, const std::map<std::string, double>& accuracies);

/// Column order: name, iiit, svt, ic03_860, ic03_867, ic13_857, ic13_1015,
/// ic15_1811, ic15_2077, sp, ct, total, time_ms, params_m, flops_g.
std::string eval_csv_header();
std::string eval_csv_row(const EvalRecord& r);
void write_eval_reports(const std::filesystem::path& dir, const std::vector<EvalRecord>& records);

struct TimingResult {
  double ms_per_image = 0.0;
  std::size_t samples = 0;
  std::size_t repetitions = 0;
  std::string environment;
};

/// `run` processes `samples` images once. One warm-up call, then the mean
/// wall time over `repetitions`.
TimingResult timing_probe(const std::function<void()>& run, std::size_t samples, std::size_t repetitions);

}  // namespace strforge
