#include "strforge/tradeoff.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "strforge/errors.hpp"

#ifndef STRFORGE_DATA_DIR
#define STRFORGE_DATA_DIR "data"
#endif

namespace strforge {

namespace {

const std::vector<std::string> kColumns{"id",        "trans",     "feat",      "seq",  "pred", "iiit",
                                        "svt",       "ic03_860",  "ic03_867",  "ic13_857", "ic13_1015",
                                        "ic15_1811", "ic15_2077", "sp",        "ct",   "total", "time_ms",
                                        "params_m",  "flops_g"};

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string cell; std::getline(ss, cell, ',');) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    out.push_back(cell);
  }
  return out;
}

double parse_number(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(where + ": '" + s + "' is not a number");
  }
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os << std::setprecision(digits) << std::fixed << v;
  return os.str();
}

const char* axis_name(CostAxis a) { return a == CostAxis::Time ? "time" : "params"; }

}  // namespace

const std::string& ResultRow::module(const std::string& stage) const {
  if (stage == "trans") return trans;
  if (stage == "feat") return feat;
  if (stage == "seq") return seq;
  if (stage == "pred") return pred;
  throw ConfigError("unknown stage '" + stage + "' (trans, feat, seq, pred)");
}

ResultsFixture parse_results_csv(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw DataError(source + ": empty results file");
  const auto header = split_csv(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const auto& c : kColumns)
    if (!col.count(c)) throw DataError(source + ": missing column '" + c + "'");

  ResultsFixture rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv(line);
    const std::string where = source + ":" + std::to_string(lineno);
    if (cells.size() != header.size()) throw DataError(where + ": expected " + std::to_string(header.size()) + " cells");
    auto num = [&](const char* c) { return parse_number(cells[col[c]], where); };
    ResultRow r;
    r.id = static_cast<std::size_t>(num("id"));
    r.trans = cells[col["trans"]];
    r.feat = cells[col["feat"]];
    r.seq = cells[col["seq"]];
    r.pred = cells[col["pred"]];
    double* acc[] = {&r.iiit, &r.svt, &r.ic03_860, &r.ic03_867, &r.ic13_857, &r.ic13_1015, &r.ic15_1811, &r.ic15_2077,
                     &r.sp, &r.ct, &r.total};
    for (std::size_t k = 0; k < 11; ++k) {
      *acc[k] = num(kColumns[5 + k].c_str());
      if (*acc[k] < 0.0 || *acc[k] > 100.0) throw DataError(where + ": accuracy " + kColumns[5 + k] + " outside [0, 100]");
    }
    r.time_ms = num("time_ms");
    r.params_m = num("params_m");
    r.flops_g = num("flops_g");
    if (r.time_ms <= 0.0 || r.params_m <= 0.0) throw DataError(where + ": costs must be positive");
    rows.push_back(std::move(r));
  }
  return rows;
}

ResultsFixture read_results_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open results table " + path.string());
  return parse_results_csv(in, path.string());
}

std::filesystem::path bundled_results_path() { return std::filesystem::path(STRFORGE_DATA_DIR) / "results_24.csv"; }

void check_full_table(const ResultsFixture& rows) {
  if (rows.size() != 24) throw DataError("results table has " + std::to_string(rows.size()) + " rows, expected 24");
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (rows[i].id != i + 1) throw DataError("results row " + std::to_string(i + 1) + " has id " + std::to_string(rows[i].id));
}

ResultsFixture load_results(const std::filesystem::path& path) {
  auto rows = read_results_csv(path);
  check_full_table(rows);
  return rows;
}

std::vector<TradeoffPoint> to_points(const ResultsFixture& rows, CostAxis axis) {
  std::vector<TradeoffPoint> pts;
  for (const auto& r : rows) pts.push_back({r.id, r.name(), r.total, axis == CostAxis::Time ? r.time_ms : r.params_m});
  return pts;
}

std::vector<TradeoffPoint> pareto_set(const std::vector<TradeoffPoint>& points) {
  std::vector<std::size_t> order(points.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (points[a].cost != points[b].cost) return points[a].cost < points[b].cost;
    return points[a].accuracy > points[b].accuracy;
  });
  // Sweep groups of equal cost; a group's best survive only if they beat
  // everything strictly cheaper.
  std::vector<bool> keep(points.size(), false);
  double best_cheaper = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    const double cost = points[order[i]].cost, top = points[order[i]].accuracy;
    while (j < order.size() && points[order[j]].cost == cost) {
      if (points[order[j]].accuracy == top && top > best_cheaper) keep[order[j]] = true;
      ++j;
    }
    best_cheaper = std::max(best_cheaper, top);
    i = j;
  }
  std::vector<TradeoffPoint> out;
  for (std::size_t i = 0; i < points.size(); ++i)
    if (keep[i]) out.push_back(points[i]);
  return out;
}

std::vector<TradeoffPoint> frontier_chain(const std::vector<TradeoffPoint>& points) {
  auto set = pareto_set(points);
  std::sort(set.begin(), set.end(), [](const TradeoffPoint& a, const TradeoffPoint& b) {
    if (a.cost != b.cost) return a.cost < b.cost;
    if (a.accuracy != b.accuracy) return a.accuracy > b.accuracy;
    return a.id < b.id;
  });
  std::vector<TradeoffPoint> chain;
  for (const auto& p : set)
    if (chain.empty() || (p.accuracy > chain.back().accuracy && p.cost > chain.back().cost)) chain.push_back(p);
  return chain;
}

Marginal module_marginal(const ResultsFixture& rows, const std::string& stage, const std::string& option,
                         Aggregation agg) {
  Marginal m{stage, option, 0, 0.0, 0.0, 0.0};
  for (const auto& r : rows) {
    if (r.module(stage) != option) continue;
    double reg = 0, irr = 0;
    if (agg == Aggregation::SizeWeighted) {
      reg = (3000 * r.iiit + 647 * r.svt + 867 * r.ic03_867 + 1015 * r.ic13_1015) / (3000.0 + 647 + 867 + 1015);
      irr = (2077 * r.ic15_2077 + 645 * r.sp + 288 * r.ct) / (2077.0 + 645 + 288);
    } else {
      reg = (r.iiit + r.svt + r.ic03_867 + r.ic13_1015) / 4.0;
      irr = (r.ic15_2077 + r.sp + r.ct) / 3.0;
    }
    ++m.rows;
    m.total += r.total;
    m.regular += reg;
    m.irregular += irr;
  }
  if (m.rows == 0) throw ConfigError("no rows use " + option + " at stage " + stage);
  const double n = static_cast<double>(m.rows);
  m.total /= n;
  m.regular /= n;
  m.irregular /= n;
  return m;
}

std::vector<Marginal> all_marginals(const ResultsFixture& rows, Aggregation agg) {
  std::vector<Marginal> out;
  for (const std::string stage : {"trans", "feat", "seq", "pred"}) {
    std::vector<std::string> options;
    for (const auto& r : rows)
      if (std::find(options.begin(), options.end(), r.module(stage)) == options.end()) options.push_back(r.module(stage));
    for (const auto& o : options) out.push_back(module_marginal(rows, stage, o, agg));
  }
  return out;
}

nlohmann::json emit_report(const ResultsFixture& rows, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto open = [&](const std::string& name) {
    std::ofstream f(dir / name);
    if (!f) throw DataError("cannot write " + (dir / name).string());
    return f;
  };
  nlohmann::json report{{"rows", rows.size()}};
  for (CostAxis axis : {CostAxis::Time, CostAxis::Params}) {
    const std::string a = axis_name(axis);
    const auto pts = to_points(rows, axis);
    const auto front = pareto_set(pts);
    const auto chain = frontier_chain(pts);
    auto ids = [](const std::vector<TradeoffPoint>& v) {
      std::vector<std::size_t> out;
      for (const auto& p : v) out.push_back(p.id);
      return out;
    };
    report["frontier_" + a] = ids(front);
    report["chain_" + a] = ids(chain);

    auto f = open("frontier_" + a + ".csv");
    f << "id,name,accuracy,cost\n";
    for (const auto& p : front) f << p.id << ',' << p.name << ',' << fmt(p.accuracy, 1) << ',' << fmt(p.cost, 1) << '\n';
    auto c = open("chain_" + a + ".csv");
    c << "rank,id,name,accuracy,cost\n";
    for (std::size_t i = 0; i < chain.size(); ++i)
      c << i + 1 << ',' << chain[i].id << ',' << chain[i].name << ',' << fmt(chain[i].accuracy, 1) << ','
        << fmt(chain[i].cost, 1) << '\n';
    auto s = open("scatter_" + a + ".csv");
    s << "id,name,x,y,trans,feat,seq,pred,frontier\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const bool on = std::any_of(front.begin(), front.end(), [&](const auto& p) { return p.id == rows[i].id; });
      s << rows[i].id << ',' << rows[i].name() << ',' << fmt(pts[i].cost, 1) << ',' << fmt(pts[i].accuracy, 1) << ','
        << rows[i].trans << ',' << rows[i].feat << ',' << rows[i].seq << ',' << rows[i].pred << ',' << (on ? 1 : 0)
        << '\n';
    }
  }
  auto m = open("marginals.csv");
  m << "aggregation,stage,option,rows,total,regular,irregular\n";
  nlohmann::json marg = nlohmann::json::array();
  for (auto agg : {Aggregation::SizeWeighted, Aggregation::DatasetMean}) {
    const std::string name = agg == Aggregation::SizeWeighted ? "size_weighted" : "dataset_mean";
    for (const auto& x : all_marginals(rows, agg)) {
      m << name << ',' << x.stage << ',' << x.option << ',' << x.rows << ',' << fmt(x.total) << ',' << fmt(x.regular)
        << ',' << fmt(x.irregular) << '\n';
      marg.push_back({{"aggregation", name}, {"stage", x.stage}, {"option", x.option}, {"rows", x.rows},
                      {"total", x.total}, {"regular", x.regular}, {"irregular", x.irregular}});
    }
  }
  report["marginals"] = marg;
  auto j = open("tradeoff.json");
  j << report.dump(2) << '\n';
  return report;
}

}  // namespace strforge
