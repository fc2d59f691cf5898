#pragma once

#include <filesystem>
#include <istream>
#include <string>
#include <vector>

#include <json.hpp>

namespace strforge {

/// One row of the 24-combination results table.
struct ResultRow {
  std::size_t id = 0;
  std::string trans, feat, seq, pred;
  double iiit = 0, svt = 0, ic03_860 = 0, ic03_867 = 0, ic13_857 = 0, ic13_1015 = 0, ic15_1811 = 0, ic15_2077 = 0,
         sp = 0, ct = 0;
  double total = 0, time_ms = 0, params_m = 0, flops_g = 0;

  std::string name() const { return trans + "-" + feat + "-" + seq + "-" + pred; }
  /// Module name of a stage: "trans", "feat", "seq" or "pred".
  const std::string& module(const std::string& stage) const;
};
using ResultsFixture = std::vector<ResultRow>;

/// Columns: id, trans, feat, seq, pred, iiit, svt, ic03_860, ic03_867,
/// ic13_857, ic13_1015, ic15_1811, ic15_2077, sp, ct, total, time_ms,
/// params_m, flops_g. Throws DataError on malformed rows, accuracies outside
/// [0, 100] or non-positive costs.
ResultsFixture parse_results_csv(std::istream& in, const std::string& source = "results");
ResultsFixture read_results_csv(const std::filesystem::path& path);
/// The bundled table shipped under data/.
std::filesystem::path bundled_results_path();
/// DataError unless the rows are exactly ids 1..24 in order.
void check_full_table(const ResultsFixture& rows);
/// read_results_csv followed by check_full_table.
ResultsFixture load_results(const std::filesystem::path& path = bundled_results_path());

enum class CostAxis { Time, Params };

struct TradeoffPoint {
  std::size_t id = 0;
  std::string name;
  double accuracy = 0.0;
  double cost = 0.0;
};

std::vector<TradeoffPoint> to_points(const ResultsFixture& rows, CostAxis axis);

/// Points no other point beats: q dominates p when cost(q) <= cost(p) and
/// acc(q) >= acc(p) with one strict. Input order is kept.
std::vector<TradeoffPoint> pareto_set(const std::vector<TradeoffPoint>& points);

/// The Pareto set by ascending cost (ties: higher accuracy, then lower id),
/// keeping only strict accuracy gains so both coordinates increase.
std::vector<TradeoffPoint> frontier_chain(const std::vector<TradeoffPoint>& points);

enum class Aggregation {
  SizeWeighted,  // datasets weighted by their unified-evaluation sizes
  DatasetMean,   // plain mean of the per-dataset accuracies
};

struct Marginal {
  std::string stage, option;
  std::size_t rows = 0;
  double total = 0.0;
  double regular = 0.0;    // IIIT, SVT, IC03-867, IC13-1015
  double irregular = 0.0;  // IC15-2077, SP, CT
};

/// Means over the rows using `option` at `stage`. Throws ConfigError for an
/// unknown stage or an option with no rows.
Marginal module_marginal(const ResultsFixture& rows, const std::string& stage, const std::string& option,
                         Aggregation agg = Aggregation::SizeWeighted);
std::vector<Marginal> all_marginals(const ResultsFixture& rows, Aggregation agg = Aggregation::SizeWeighted);

/// Writes frontier_{time,params}.csv, chain_{time,params}.csv,
/// marginals.csv, scatter_{time,params}.csv and tradeoff.json into `dir`.
nlohmann::json emit_report(const ResultsFixture& rows, const std::filesystem::path& dir);

}  // namespace strforge
