#include "strforge/evalkit.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <memory>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "strforge/errors.hpp"

namespace strforge {

namespace {

bool is_alnum_ascii(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u < 128 && std::isalnum(u);
}

bool all_alnum(const std::string& s) { return std::all_of(s.begin(), s.end(), is_alnum_ascii); }

std::size_t declared_size(const std::string& dataset) {
  for (const auto& [name, n] : unified_composition())
    if (name == dataset) return n;
  return 0;
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

// Totals weighted by composition size (or `own` for datasets outside it).
void fill_totals(EvalRecord& r, const std::map<std::string, std::size_t>& own_sizes) {
  double wt = 0, t = 0, wr = 0, reg = 0, wi = 0, irr = 0;
  for (const auto& d : r.datasets) {
    std::size_t w = declared_size(d.dataset);
    if (w == 0) w = own_sizes.count(d.dataset) ? own_sizes.at(d.dataset) : d.count;
    const double wd = static_cast<double>(w);
    wt += wd;
    t += wd * d.accuracy;
    if (declared_size(d.dataset) == 0) continue;
    if (is_regular(d.dataset)) {
      wr += wd;
      reg += wd * d.accuracy;
    } else {
      wi += wd;
      irr += wd * d.accuracy;
    }
  }
  r.total = wt > 0 ? t / wt : 0.0;
  if (wr > 0) r.regular = reg / wr;
  if (wi > 0) r.irregular = irr / wi;
}

}  // namespace

std::string normalize_label(std::string_view s) {
  std::string out;
  for (char c : s)
    if (is_alnum_ascii(c)) out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  return out;
}

double word_accuracy(const std::vector<std::string>& preds, const std::vector<std::string>& gts) {
  if (preds.size() != gts.size()) {
    throw DataError(std::to_string(preds.size()) + " predictions for " + std::to_string(gts.size()) + " labels");
  }
  if (gts.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < gts.size(); ++i) hit += normalize_label(preds[i]) == normalize_label(gts[i]);
  return 100.0 * static_cast<double>(hit) / static_cast<double>(gts.size());
}

const std::vector<std::string>& known_datasets() {
  static const std::vector<std::string> names{"IIIT", "SVT", "IC03", "IC13", "IC15", "SP", "CT", "custom"};
  return names;
}

Manifest parse_manifest(std::istream& in, const std::string& source) {
  Manifest m;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  const auto& names = known_datasets();
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": " + e.what());
    }
    ManifestEntry e;
    try {
      e.image = j.at("image").get<std::string>();
      e.label = j.at("label").get<std::string>();
      e.dataset = j.value("dataset", std::string("custom"));
      e.scene = j.value("scene", std::string());
      if (j.contains("digest") && !j["digest"].is_null()) e.digest = j["digest"].get<std::string>();
    } catch (const nlohmann::json::exception& ex) {
      throw DataError(where + ": " + ex.what());
    }
    if (std::find(names.begin(), names.end(), e.dataset) == names.end()) {
      throw DataError(where + ": unknown dataset '" + e.dataset + "'");
    }
    if (!seen.insert(e.image).second) throw DataError(where + ": repeated image '" + e.image + "'");
    m.push_back(std::move(e));
  }
  return m;
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  return parse_manifest(in, path.string());
}

void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest " + path.string());
  for (const auto& e : m) {
    nlohmann::json j{{"image", e.image}, {"label", e.label}, {"dataset", e.dataset}, {"scene", e.scene}};
    if (e.digest) j["digest"] = *e.digest;
    out << j.dump() << '\n';
  }
}

const std::vector<std::size_t>& benchmark_variants(const std::string& dataset) {
  static const std::map<std::string, std::vector<std::size_t>> variants{
      {"IIIT", {3000}}, {"SVT", {647}},  {"IC03", {867, 860}}, {"IC13", {1015, 857}},
      {"IC15", {2077, 1811}}, {"SP", {645}}, {"CT", {288}}, {"custom", {0}}};
  auto it = variants.find(dataset);
  if (it == variants.end()) throw ConfigError("unknown dataset '" + dataset + "'");
  return it->second;
}

nlohmann::json FilterReport::to_json() const {
  return {{"dataset", dataset}, {"variant", variant}, {"before", before}, {"after_rules", after_rules}, {"after", after}};
}

Manifest filter_benchmark(const Manifest& m, const std::string& dataset, std::size_t variant, const Manifest* exclusion,
                          FilterReport* report) {
  const auto& allowed = benchmark_variants(dataset);
  if (std::find(allowed.begin(), allowed.end(), variant) == allowed.end()) {
    throw ConfigError("no variant " + std::to_string(variant) + " for " + dataset);
  }
  const bool needs_list = (dataset == "IC03" && variant == 860) || (dataset == "IC15" && variant == 1811);
  if (needs_list && exclusion == nullptr) {
    throw ConfigError(dataset + "/" + std::to_string(variant) + " needs an exclusion list");
  }
  // IC03 subsets and IC13/857 drop short words; IC03 and IC13 drop
  // non-alphanumeric words.
  const bool alnum_rule = dataset == "IC03" || dataset == "IC13";
  const bool length_rule = dataset == "IC03" || (dataset == "IC13" && variant == 857);

  FilterReport rep{dataset, variant, 0, 0, 0};
  std::set<std::string> excluded;
  if (exclusion)
    for (const auto& e : *exclusion) excluded.insert(e.image);

  Manifest out;
  for (const auto& e : m) {
    if (e.dataset != dataset) continue;
    ++rep.before;
    if (alnum_rule && !all_alnum(e.label)) continue;
    if (length_rule && e.label.size() < 3) continue;
    ++rep.after_rules;
    if (needs_list && excluded.count(e.image)) continue;
    out.push_back(e);
  }
  rep.after = out.size();
  if (report) *report = rep;
  return out;
}

nlohmann::json DuplicateReport::to_json() const {
  return {{"scenes", scenes},
          {"word_boxes", word_boxes},
          {"digest_matches", digest_matches},
          {"label_matches", label_matches},
          {"heuristic", label_matches > 0},
          {"train_scenes", train_scenes}};
}

DuplicateReport dedupe_scan(const Manifest& train, const Manifest& eval) {
  std::multimap<std::string, std::size_t> by_digest, by_label;
  for (std::size_t j = 0; j < eval.size(); ++j) {
    if (eval[j].digest) by_digest.emplace(*eval[j].digest, j);
    by_label.emplace(eval[j].scene + '\x1f' + eval[j].label, j);
  }

  // Union-find over train scenes (first) and eval scenes.
  std::map<std::string, std::size_t> train_id, eval_id;
  std::vector<std::size_t> parent;
  auto node = [&](std::map<std::string, std::size_t>& ids, const std::string& s) {
    auto [it, fresh] = ids.emplace(s, parent.size());
    if (fresh) parent.push_back(parent.size());
    return it->second;
  };
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };

  DuplicateReport rep;
  std::set<std::size_t> dup_train;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto& t = train[i];
    std::vector<std::pair<std::size_t, bool>> hits;  // eval index, by digest
    if (t.digest) {
      auto [lo, hi] = by_digest.equal_range(*t.digest);
      for (auto it = lo; it != hi; ++it) hits.emplace_back(it->second, true);
    }
    auto [lo, hi] = by_label.equal_range(t.scene + '\x1f' + t.label);
    for (auto it = lo; it != hi; ++it)
      if (!(t.digest && eval[it->second].digest)) hits.emplace_back(it->second, false);
    for (auto [j, digest] : hits) {
      ++rep.word_boxes;
      ++(digest ? rep.digest_matches : rep.label_matches);
      dup_train.insert(i);
      const std::size_t a = find(node(train_id, t.scene)), b = find(node(eval_id, eval[j].scene));
      parent[a] = b;
    }
  }
  std::set<std::size_t> roots;
  for (const auto& [s, id] : train_id) roots.insert(find(id));
  rep.scenes = roots.size();
  for (const auto& [s, id] : train_id) rep.train_scenes.push_back(s);
  rep.train_duplicates.assign(dup_train.begin(), dup_train.end());
  return rep;
}

Manifest remove_duplicates(const Manifest& train, const DuplicateReport& report) {
  std::set<std::size_t> drop(report.train_duplicates.begin(), report.train_duplicates.end());
  Manifest out;
  for (std::size_t i = 0; i < train.size(); ++i)
    if (!drop.count(i)) out.push_back(train[i]);
  return out;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

void fill_digests(Manifest& m, const std::filesystem::path& base) {
  for (auto& e : m)
    if (!e.digest) e.digest = sha256_file(base / e.image);
}

const std::vector<std::pair<std::string, std::size_t>>& unified_composition() {
  static const std::vector<std::pair<std::string, std::size_t>> c{{"IIIT", 3000}, {"SVT", 647}, {"IC03", 867},
                                                                  {"IC13", 1015}, {"IC15", 2077}, {"SP", 645},
                                                                  {"CT", 288}};
  return c;
}

std::size_t unified_total() {
  std::size_t n = 0;
  for (const auto& [name, size] : unified_composition()) n += size;
  return n;
}

bool is_regular(const std::string& dataset) {
  return dataset == "IIIT" || dataset == "SVT" || dataset == "IC03" || dataset == "IC13";
}

nlohmann::json EvalRecord::to_json() const {
  nlohmann::json ds = nlohmann::json::array();
  for (const auto& d : datasets) {
    ds.push_back({{"dataset", d.dataset}, {"variant", d.variant}, {"count", d.count}, {"correct", d.correct},
                  {"accuracy", d.accuracy}});
  }
  nlohmann::json j{{"name", name}, {"datasets", ds}, {"total", total}, {"time_ms", time_ms},
                   {"params_m", params_m}, {"warnings", warnings}};
  j["regular"] = regular ? nlohmann::json(*regular) : nlohmann::json();
  j["irregular"] = irregular ? nlohmann::json(*irregular) : nlohmann::json();
  j["flops_g"] = flops_g ? nlohmann::json(*flops_g) : nlohmann::json();
  return j;
}

EvalRecord unified_eval(const std::string& name, const Manifest& m, const std::vector<std::string>& predictions,
                        const std::map<std::string, std::size_t>& variants) {
  if (predictions.size() != m.size()) {
    throw DataError(std::to_string(predictions.size()) + " predictions for " + std::to_string(m.size()) + " entries");
  }
  EvalRecord r;
  r.name = name;
  std::map<std::string, DatasetResult> acc;
  for (std::size_t i = 0; i < m.size(); ++i) {
    auto& d = acc[m[i].dataset];
    d.dataset = m[i].dataset;
    ++d.count;
    d.correct += normalize_label(predictions[i]) == normalize_label(m[i].label);
  }
  std::map<std::string, std::size_t> own;
  for (const auto& ds : known_datasets()) {
    auto it = acc.find(ds);
    if (it == acc.end()) continue;
    auto d = it->second;
    d.accuracy = 100.0 * static_cast<double>(d.correct) / static_cast<double>(d.count);
    d.variant = variants.count(ds) ? variants.at(ds) : benchmark_variants(ds).front();
    if (ds != "custom" && d.count != d.variant) {
      const long delta = static_cast<long>(d.count) - static_cast<long>(d.variant);
      r.warnings.push_back("composition: " + ds + " has " + std::to_string(d.count) + " entries, expected " +
                           std::to_string(d.variant) + " (" + (delta > 0 ? "+" : "") + std::to_string(delta) + ")");
    }
    own[ds] = d.count;
    r.datasets.push_back(d);
  }
  fill_totals(r, own);
  return r;
}

EvalRecord aggregate_accuracies(const std::string& name, const std::map<std::string, double>& accuracies) {
  EvalRecord r;
  r.name = name;
  for (const auto& ds : known_datasets()) {
    auto it = accuracies.find(ds);
    if (it == accuracies.end()) continue;
    if (it->second < 0.0 || it->second > 100.0) throw DataError("accuracy out of [0, 100] for " + ds);
    DatasetResult d;
    d.dataset = ds;
    d.variant = benchmark_variants(ds).front();
    d.count = d.variant;
    d.accuracy = it->second;
    r.datasets.push_back(d);
  }
  for (const auto& [ds, a] : accuracies) {
    const auto& names = known_datasets();
    if (std::find(names.begin(), names.end(), ds) == names.end()) throw DataError("unknown dataset '" + ds + "'");
  }
  fill_totals(r, {});
  return r;
}

std::string eval_csv_header() {
  return "name,iiit,svt,ic03_860,ic03_867,ic13_857,ic13_1015,ic15_1811,ic15_2077,sp,ct,total,time_ms,params_m,flops_g";
}

std::string eval_csv_row(const EvalRecord& r) {
  static const std::vector<std::pair<std::string, std::size_t>> columns{
      {"IIIT", 3000}, {"SVT", 647},   {"IC03", 860},  {"IC03", 867}, {"IC13", 857},
      {"IC13", 1015}, {"IC15", 1811}, {"IC15", 2077}, {"SP", 645},   {"CT", 288}};
  std::ostringstream os;
  os << r.name;
  for (const auto& [ds, variant] : columns) {
    os << ',';
    for (const auto& d : r.datasets)
      if (d.dataset == ds && d.variant == variant) os << fixed(d.accuracy, 2);
  }
  os << ',' << fixed(r.total, 2) << ',' << fixed(r.time_ms, 3) << ',' << fixed(r.params_m, 3) << ',';
  if (r.flops_g) os << fixed(*r.flops_g, 3);
  return os.str();
}

void write_eval_reports(const std::filesystem::path& dir, const std::vector<EvalRecord>& records) {
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir / "eval.csv");
  std::ofstream js(dir / "eval.json");
  if (!csv || !js) throw DataError("cannot write reports under " + dir.string());
  csv << eval_csv_header() << '\n';
  nlohmann::json all = nlohmann::json::array();
  for (const auto& r : records) {
    csv << eval_csv_row(r) << '\n';
    all.push_back(r.to_json());
  }
  js << all.dump(2) << '\n';
}

TimingResult timing_probe(const std::function<void()>& run, std::size_t samples, std::size_t repetitions) {
  if (samples == 0 || repetitions == 0) throw ConfigError("timing probe needs samples and repetitions");
  run();
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t r = 0; r < repetitions; ++r) run();
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  TimingResult t;
  t.samples = samples;
  t.repetitions = repetitions;
  t.ms_per_image = ms / static_cast<double>(repetitions * samples);
  std::ostringstream env;
  env << "cpu_threads=" << std::thread::hardware_concurrency() << " compiler=" << __VERSION__;
  t.environment = env.str();
  return t;
}

}  // namespace strforge
