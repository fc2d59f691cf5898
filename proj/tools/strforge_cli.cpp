// strforge command-line front end: train, eval, describe, audit, frontier,
// synthgen. Exit codes: 0 ok, 2 usage, 3 data, 4 numeric.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "strforge/errors.hpp"
#include "strforge/evalkit.hpp"
#include "strforge/pipeline.hpp"
#include "strforge/tps.hpp"
#include "strforge/tradeoff.hpp"

#ifndef STRFORGE_VERSION
#define STRFORGE_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace strforge;

namespace {

constexpr int kExitUsage = 2, kExitData = 3, kExitNumeric = 4;

int exit_code(Error::Category c) {
  switch (c) {
    case Error::Category::Usage: return kExitUsage;
    case Error::Category::Data: return kExitData;
    case Error::Category::Numeric: return kExitNumeric;
  }
  return 1;
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

// Images listed in a manifest, resolved relative to the manifest's folder.
Dataset load_images(const Manifest& m, const fs::path& base) {
  Dataset ds;
  ds.reserve(m.size());
  for (const auto& e : m) ds.push_back(read_pgm(base / e.image, e.label));
  return ds;
}

// "IC03=860" style key=value flags.
std::map<std::string, std::string> key_values(const std::vector<std::string>& items, const std::string& flag) {
  std::map<std::string, std::string> out;
  for (const auto& s : items) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == s.size())
      throw ConfigError(flag + " expects DATASET=VALUE, got '" + s + "'");
    std::string key = s.substr(0, eq);
    for (char& c : key) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (key == "CUSTOM") key = "custom";
    benchmark_variants(key);  // rejects unknown datasets
    out[key] = s.substr(eq + 1);
  }
  return out;
}

struct Common {
  std::string out;
  std::uint64_t seed = 0;
};

struct TrainArgs {
  std::string pipeline = "None-VGG-None-CTC";
  double scale = 1.0;
  std::size_t fiducials = 20;
  std::string train_manifest, val_manifest, init;
  std::size_t synthetic = 0, val_synthetic = 0, max_len = 5;
  TrainRecipe recipe;
  double target = 0.0;
  std::size_t epochs = 0;
  std::vector<double> sweep;
};

struct EvalArgs {
  std::string model, manifest, name;
  std::vector<std::string> subsets, excludes;
  std::size_t batch = 64, timing_reps = 0;
};

struct DescribeArgs {
  std::string pipeline = "None-VGG-BiLSTM-CTC";
  double scale = 1.0;
  std::size_t fiducials = 20;
  bool tps = false;
};

struct AuditArgs {
  std::string train, eval;
  std::vector<std::string> subsets, excludes;
  bool hash = false, clean = false;
};

struct FrontierArgs {
  std::string results = bundled_results_path().string();
  std::string axis = "both";
};

struct SynthArgs {
  std::size_t n = 1000, min_len = 1, max_len = 5;
};

Dataset training_data(const std::string& manifest, std::size_t synthetic, std::size_t max_len, std::uint64_t seed,
                      const char* what) {
  if (!manifest.empty()) {
    if (synthetic) throw ConfigError(std::string("give either a ") + what + " manifest or a synthetic count, not both");
    return load_images(read_manifest(manifest), fs::path(manifest).parent_path());
  }
  if (synthetic == 0) throw ConfigError(std::string("no ") + what + " data: pass a manifest or a synthetic count");
  return synth_toydata(synthetic, max_len, seed);
}

json run_train(const TrainArgs& a, const Common& c) {
  TrainRecipe recipe = a.recipe;
  recipe.seed = c.seed;
  recipe.threads = worker_threads();
  if (a.target > 0) recipe.target_accuracy = a.target;

  // Validation draws from a different stream than training.
  const Dataset train_set = training_data(a.train_manifest, a.synthetic, a.max_len, c.seed, "training");
  const Dataset val_set = training_data(a.val_manifest, a.val_synthetic, a.max_len, c.seed + 0x9e3779b97f4a7c15ULL, "validation");
  const fs::path out(c.out);

  if (!a.sweep.empty()) {
    PipelineConfig cfg = PipelineConfig::parse(a.pipeline);
    cfg.scale = a.scale;
    cfg.fiducials = a.fiducials;
    cfg.seed = c.seed;
    const auto rows = fraction_sweep(cfg, recipe, train_set, val_set, a.sweep);
    std::ofstream f(out / "sweep.csv");
    f << "fraction,train_size,accuracy,best_step\n" << std::setprecision(10);
    json j = json::array();
    for (const auto& r : rows) {
      f << r.fraction << ',' << r.train_size << ',' << r.accuracy << ',' << r.best_step << '\n';
      j.push_back({{"fraction", r.fraction}, {"train_size", r.train_size}, {"accuracy", r.accuracy}, {"best_step", r.best_step}});
    }
    return {{"pipeline", cfg.name()}, {"sweep", j}};
  }

  std::unique_ptr<StrModel> model;
  if (!a.init.empty()) {
    model = load_model(a.init);
  } else {
    PipelineConfig cfg = PipelineConfig::parse(a.pipeline);
    cfg.scale = a.scale;
    cfg.fiducials = a.fiducials;
    cfg.seed = c.seed;
    model = std::make_unique<StrModel>(cfg);
  }
  const TrainResult r = a.epochs > 0 ? fine_tune(*model, recipe, train_set, val_set, a.epochs, out)
                                     : train(*model, recipe, train_set, val_set, out);
  save_model(*model, out / "model.ckpt", {{"best_step", r.best_step}, {"val_accuracy", r.best_accuracy}});
  json summary{{"pipeline", model->config().name()}, {"params", model->param_count()},
               {"train_size", train_set.size()},    {"val_size", val_set.size()},
               {"steps", r.steps},                  {"best_step", r.best_step},
               {"best_accuracy", r.best_accuracy},  {"early_stopped", r.early_stopped},
               {"recipe", recipe.to_json()}};
  write_json(out / "train.json", summary);
  std::cout << model->config().name() << ": best accuracy " << r.best_accuracy << "% at step " << r.best_step << " of "
            << r.steps << '\n';
  return summary;
}

// Keeps each dataset's chosen variant and returns the selected variants.
Manifest select_subsets(const Manifest& m, const std::vector<std::string>& subsets, const std::vector<std::string>& excludes,
                        std::map<std::string, std::size_t>& variants, json& reports) {
  std::map<std::string, std::size_t> chosen;
  for (const auto& [ds, v] : key_values(subsets, "--subset")) {
    try {
      chosen[ds] = std::stoul(v);
    } catch (const std::exception&) {
      throw ConfigError("--subset " + ds + "=" + v + ": not a number");
    }
  }
  std::map<std::string, Manifest> lists;
  for (const auto& [ds, path] : key_values(excludes, "--exclude")) lists[ds] = read_manifest(path);

  std::vector<std::string> present;
  for (const auto& e : m)
    if (std::find(present.begin(), present.end(), e.dataset) == present.end()) present.push_back(e.dataset);
  for (const auto& [ds, v] : chosen)
    if (std::find(present.begin(), present.end(), ds) == present.end())
      throw DataError("--subset names " + ds + " but the manifest has no " + ds + " entries");

  Manifest kept;
  reports = json::array();
  for (const auto& ds : present) {
    const std::size_t v = chosen.count(ds) ? chosen[ds] : benchmark_variants(ds).front();
    FilterReport rep;
    const Manifest part = filter_benchmark(m, ds, v, lists.count(ds) ? &lists[ds] : nullptr, &rep);
    kept.insert(kept.end(), part.begin(), part.end());
    variants[ds] = v;
    reports.push_back(rep.to_json());
  }
  return kept;
}

json run_eval(const EvalArgs& a, const Common& c) {
  auto model = load_model(a.model);
  const Manifest all = read_manifest(a.manifest);
  std::map<std::string, std::size_t> variants;
  json filters;
  const Manifest m = select_subsets(all, a.subsets, a.excludes, variants, filters);
  if (m.empty()) throw DataError("no evaluation entries left after subset selection");
  const Dataset ds = load_images(m, fs::path(a.manifest).parent_path());

  const std::size_t threads = worker_threads();
  const auto preds = predict_dataset(*model, ds, a.batch, threads);
  EvalRecord rec = unified_eval(a.name.empty() ? model->config().name() : a.name, m, preds, variants);
  rec.params_m = static_cast<double>(model->param_count()) / 1e6;
  rec.flops_g = static_cast<double>(model->flops()) / 1e9;
  if (a.timing_reps > 0) {
    const auto t = timing_probe([&] { predict_dataset(*model, ds, a.batch, threads); }, ds.size(), a.timing_reps);
    rec.time_ms = t.ms_per_image;
  }
  const fs::path out(c.out);
  write_eval_reports(out, {rec});
  std::ofstream p(out / "predictions.csv");
  p << "image,dataset,label,prediction,correct\n";
  for (std::size_t i = 0; i < m.size(); ++i)
    p << m[i].image << ',' << m[i].dataset << ',' << normalize_label(m[i].label) << ',' << preds[i] << ','
      << (normalize_label(preds[i]) == normalize_label(m[i].label) ? 1 : 0) << '\n';
  write_json(out / "subsets.json", filters);
  for (const auto& w : rec.warnings) std::cerr << "warning: " << w << '\n';
  std::cout << rec.name << ": total " << std::fixed << std::setprecision(2) << rec.total << "% on " << m.size()
            << " images\n";
  return {{"images", m.size()}, {"total", rec.total}, {"warnings", rec.warnings}};
}

json run_describe(const DescribeArgs& a, const Common& c) {
  json j;
  if (a.tps) {
    j = tps_debug_json(a.fiducials, kImageH, kImageW);
  } else {
    PipelineConfig cfg = PipelineConfig::parse(a.pipeline);
    cfg.scale = a.scale;
    cfg.fiducials = a.fiducials;
    cfg.seed = c.seed;
    StrModel model(cfg);
    j = model.describe();
  }
  std::cout << j.dump(2) << '\n';
  if (!c.out.empty()) write_json(fs::path(c.out) / (a.tps ? "tps_debug.json" : "describe.json"), j);
  return {{"tps", a.tps}};
}

json run_audit(const AuditArgs& a, const Common& c) {
  Manifest train_m = read_manifest(a.train);
  Manifest eval_m = read_manifest(a.eval);
  if (a.hash) {
    fill_digests(train_m, fs::path(a.train).parent_path());
    fill_digests(eval_m, fs::path(a.eval).parent_path());
  }
  std::map<std::string, std::size_t> variants;
  json filters;
  select_subsets(eval_m, a.subsets, a.excludes, variants, filters);
  const DuplicateReport dup = dedupe_scan(train_m, eval_m);
  json report{{"train_entries", train_m.size()}, {"eval_entries", eval_m.size()}, {"duplicates", dup.to_json()},
              {"subsets", filters}};
  const fs::path out(c.out);
  if (a.clean) {
    const Manifest clean = remove_duplicates(train_m, dup);
    write_manifest(out / "train_clean.jsonl", clean);
    report["train_clean_entries"] = clean.size();
  }
  write_json(out / "audit.json", report);
  std::cout << "duplicates: " << dup.scenes << " scenes, " << dup.word_boxes << " word boxes\n";
  for (const auto& f : filters)
    std::cout << f["dataset"].get<std::string>() << '/' << f["variant"] << ": " << f["before"] << " -> " << f["after"] << '\n';
  return {{"scenes", dup.scenes}, {"word_boxes", dup.word_boxes}};
}

json run_frontier(const FrontierArgs& a, const Common& c) {
  const auto rows = read_results_csv(a.results);
  const json rep = emit_report(rows, c.out);
  for (const std::string axis : {"time", "params"}) {
    if (a.axis != "both" && a.axis != axis) continue;
    std::cout << axis << " frontier:";
    for (const auto& id : rep["frontier_" + axis]) std::cout << " #" << id.get<std::size_t>();
    std::cout << "\n" << axis << " chain:";
    for (const auto& id : rep["chain_" + axis]) std::cout << " #" << id.get<std::size_t>();
    std::cout << '\n';
  }
  return {{"rows", rows.size()}};
}

json run_synthgen(const SynthArgs& a, const Common& c) {
  if (a.n == 0) throw ConfigError("--n must be positive");
  const Dataset ds = synth_toydata(a.n, a.max_len, c.seed, a.min_len);
  const fs::path out(c.out);
  fs::create_directories(out / "images");
  Manifest m;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    std::ostringstream name;
    name << "images/" << std::setw(6) << std::setfill('0') << i << ".pgm";
    write_pgm(out / name.str(), ds[i]);
    m.push_back({name.str(), ds[i].label, "custom", name.str(), sha256_file(out / name.str())});
  }
  write_manifest(out / "manifest.jsonl", m);
  std::cout << "wrote " << m.size() << " images to " << (out / "images").string() << '\n';
  return {{"images", m.size()}};
}

json flags_of(const CLI::App* sub) {
  json flags = json::object();
  for (const CLI::Option* opt : sub->get_options()) {
    if (opt->get_name() == "--help" || opt->get_name() == "-h") continue;
    const std::string key = opt->get_single_name();
    if (opt->count() > 0) {
      const auto& res = opt->results();
      flags[key] = res.size() == 1 ? json(res[0]) : json(res);
    } else if (!opt->get_default_str().empty()) {
      flags[key] = opt->get_default_str();
    }
  }
  return flags;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"strforge: four-stage scene text recognition toolkit"};
  app.set_version_flag("--version", STRFORGE_VERSION);
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  Common common;
  auto add_common = [&](CLI::App* sub, bool out_required) {
    auto* o = sub->add_option("--out", common.out, "output directory");
    if (out_required) o->required();
    sub->add_option("--seed", common.seed, "random seed");
  };

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "train a pipeline (or run a data-fraction sweep)");
  add_common(train_cmd, true);
  train_cmd->add_option("--pipeline", ta.pipeline, "Trans-Feat-Seq-Pred string or preset (CRNN, RARE, GRCNN, FAN)");
  train_cmd->add_option("--scale", ta.scale, "channel scale")->check(CLI::PositiveNumber);
  train_cmd->add_option("--fiducials", ta.fiducials, "TPS fiducial points (even, >= 4)");
  train_cmd->add_option("--train", ta.train_manifest, "training manifest (JSONL, PGM images)")->check(CLI::ExistingFile);
  train_cmd->add_option("--val", ta.val_manifest, "validation manifest")->check(CLI::ExistingFile);
  train_cmd->add_option("--synthetic", ta.synthetic, "generate this many synthetic training images instead");
  train_cmd->add_option("--val-synthetic", ta.val_synthetic, "generate this many synthetic validation images instead");
  train_cmd->add_option("--max-len", ta.max_len, "longest synthetic string");
  train_cmd->add_option("--init", ta.init, "start from this checkpoint (pipeline flags are ignored)")->check(CLI::ExistingFile);
  train_cmd->add_option("--epochs", ta.epochs, "fine-tune for this many epochs instead of --iters (0 = off)");
  train_cmd->add_option("--rho", ta.recipe.rho, "AdaDelta decay");
  train_cmd->add_option("--eps", ta.recipe.eps, "AdaDelta epsilon");
  train_cmd->add_option("--lr", ta.recipe.lr, "AdaDelta learning rate");
  train_cmd->add_option("--clip", ta.recipe.clip, "gradient clipping magnitude");
  train_cmd->add_flag("--per-param-clip", ta.recipe.per_parameter_clip, "clip each parameter tensor separately");
  train_cmd->add_option("--batch", ta.recipe.batch, "batch size")->check(CLI::PositiveNumber);
  train_cmd->add_option("--iters", ta.recipe.iterations, "training iterations");
  train_cmd->add_option("--val-every", ta.recipe.val_every, "validation interval")->check(CLI::PositiveNumber);
  train_cmd->add_option("--fraction", ta.recipe.fraction, "fraction of the training set to use")->check(CLI::Range(0.0, 1.0));
  train_cmd->add_option("--target", ta.target, "stop once validation accuracy reaches this percent (0 = off)");
  train_cmd->add_option("--sweep", ta.sweep, "comma-separated training fractions to sweep")->delimiter(',');

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  add_common(eval_cmd, true);
  eval_cmd->add_option("--model", ea.model, "checkpoint")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--manifest", ea.manifest, "evaluation manifest")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--subset", ea.subsets, "benchmark variant, e.g. IC03=860 IC13=857 IC15=1811");
  eval_cmd->add_option("--exclude", ea.excludes, "exclusion manifest per dataset, e.g. IC03=list.jsonl");
  eval_cmd->add_option("--name", ea.name, "record name (default: pipeline name)");
  eval_cmd->add_option("--batch", ea.batch, "inference batch size")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--timing-reps", ea.timing_reps, "repetitions for the ms/image probe (0 = skip)");

  DescribeArgs da;
  auto* describe_cmd = app.add_subcommand("describe", "print shapes, parameter counts and FLOPs");
  add_common(describe_cmd, false);
  describe_cmd->add_option("--pipeline", da.pipeline, "Trans-Feat-Seq-Pred string or preset");
  describe_cmd->add_option("--scale", da.scale, "channel scale")->check(CLI::PositiveNumber);
  describe_cmd->add_option("--fiducials", da.fiducials, "TPS fiducial points");
  describe_cmd->add_flag("--tps", da.tps, "dump the TPS base points, Delta matrix and identity grid instead");

  AuditArgs aa;
  auto* audit_cmd = app.add_subcommand("audit", "check subset counts and train/eval overlap");
  add_common(audit_cmd, true);
  audit_cmd->add_option("--train", aa.train, "training manifest")->required()->check(CLI::ExistingFile);
  audit_cmd->add_option("--eval", aa.eval, "evaluation manifest")->required()->check(CLI::ExistingFile);
  audit_cmd->add_option("--subset", aa.subsets, "benchmark variant, e.g. IC03=860");
  audit_cmd->add_option("--exclude", aa.excludes, "exclusion manifest per dataset");
  audit_cmd->add_flag("--hash", aa.hash, "hash image files for entries without a digest");
  audit_cmd->add_flag("--clean", aa.clean, "write train_clean.jsonl without the duplicates");

  FrontierArgs fa;
  auto* frontier_cmd = app.add_subcommand("frontier", "Pareto frontiers and module marginals of a results table");
  add_common(frontier_cmd, true);
  frontier_cmd->add_option("--results", fa.results, "results CSV")->check(CLI::ExistingFile);
  frontier_cmd->add_option("--axis", fa.axis, "cost axis to print")->check(CLI::IsMember({"time", "params", "both"}));

  SynthArgs sa;
  auto* synth_cmd = app.add_subcommand("synthgen", "render a synthetic text dataset with a manifest");
  add_common(synth_cmd, true);
  synth_cmd->add_option("--n", sa.n, "number of images");
  synth_cmd->add_option("--min-len", sa.min_len, "shortest string")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--max-len", sa.max_len, "longest string (<= 16)")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "strforge: usage error: " << one_line(e.what()) << " (see --help)\n";
    return kExitUsage;
  }

  const auto start = std::chrono::steady_clock::now();
  CLI::App* sub = app.get_subcommands().front();
  try {
    if (!common.out.empty()) fs::create_directories(common.out);
    json result;
    if (sub == train_cmd) result = run_train(ta, common);
    else if (sub == eval_cmd) result = run_eval(ea, common);
    else if (sub == describe_cmd) result = run_describe(da, common);
    else if (sub == audit_cmd) result = run_audit(aa, common);
    else if (sub == frontier_cmd) result = run_frontier(fa, common);
    else result = run_synthgen(sa, common);

    if (!common.out.empty()) {
      const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      write_json(fs::path(common.out) / "manifest.json",
                 {{"command", sub->get_name()}, {"flags", flags_of(sub)}, {"seed", common.seed},
                  {"version", STRFORGE_VERSION}, {"threads", worker_threads()}, {"result", result},
                  {"wall_time_s", wall}});
    }
    return 0;
  } catch (const Error& e) {
    std::cerr << "strforge: " << one_line(e.what()) << '\n';
    return exit_code(e.category());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "strforge: data error: " << one_line(e.what()) << '\n';
    return kExitData;
  } catch (const json::exception& e) {
    std::cerr << "strforge: data error: " << one_line(e.what()) << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "strforge: numeric error: " << one_line(e.what()) << '\n';
    return kExitNumeric;
  }
}
