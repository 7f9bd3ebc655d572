// tcslot command line: gen-data, train, eval, predict, ablate, plot.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "tcslot/tcslot.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tcslot;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kConfig = 2, kData = 3, kNumeric = 4, kInternal = 5 };

constexpr const char* kDataRootEnv = "TCSLOT_DATA_ROOT";

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path);
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
}

template <typename C>
C section(const json& cfg, const char* name) {
  try {
    return cfg.contains(name) ? cfg.at(name).get<C>() : C{};
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config section '") + name + "': " + e.what());
  }
}

// Flag wins over the environment variable.
fs::path resolve_data(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv(kDataRootEnv); env && *env) return env;
  throw ConfigError(std::string("no data directory: pass --data or set ") + kDataRootEnv);
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

void check_compatible(const model::ModelConfig& mc, const dataset::Manifest& m) {
  if (mc.input_height != m.height || mc.input_width != m.width) {
    throw ConfigError("model input " + std::to_string(mc.input_height) + "x" + std::to_string(mc.input_width) +
                      " does not match dataset slices " + std::to_string(m.height) + "x" + std::to_string(m.width));
  }
  if (mc.g != m.g) throw ConfigError("model g does not match dataset g");
}

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<int> k;
};

void apply(const Overrides& o, model::ModelConfig& mc, train::TrainConfig& tc) {
  if (o.seed) {
    mc.init_seed = *o.seed;
    tc.seed = *o.seed;
  }
  if (o.epochs) {
    tc.epochs = *o.epochs;
    std::vector<int> kept;
    for (int e : tc.lr_decay_epochs) {
      if (e < tc.epochs) kept.push_back(e);
      else spdlog::warn("dropping LR decay epoch {} (run has {} epochs)", e, tc.epochs);
    }
    tc.lr_decay_epochs = kept;
  }
  if (o.k) mc.k = *o.k;
}

// ---- gen-data ----------------------------------------------------------------

struct GenArgs {
  std::string config, out, slope_profile;
  std::optional<std::uint64_t> seed;
  std::optional<int> patients, k;
};

int cmd_gen_data(const GenArgs& a) {
  auto dc = section<dataset::DatasetConfig>(load_config(a.config), "dataset");
  if (a.seed) dc.seed = *a.seed;
  if (a.patients) dc.n_patients = *a.patients;
  if (a.k) dc.k = *a.k;
  if (!a.slope_profile.empty()) dc.slopes.name = a.slope_profile;
  const fs::path out = resolve_data(a.out);
  const auto m = dataset::build_dataset(out, dc);
  spdlog::info("wrote {} patients, {} triplets to {}", m.patients.size(), m.triplets.size(), out.string());
  return kOk;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string config, data, out, split = "train", val_split = "val";
  Overrides ov;
};

int cmd_train(const TrainArgs& a) {
  const json cfg = load_config(a.config);
  auto mc = section<model::ModelConfig>(cfg, "model");
  auto tc = section<train::TrainConfig>(cfg, "train");
  apply(a.ov, mc, tc);
  const auto m = dataset::read_manifest(resolve_data(a.data) / "manifest.json");
  check_compatible(mc, m);
  const auto tr = dataset::load_samples(m, a.split, mc.k);
  if (tr.empty()) throw DataError("split '" + a.split + "' has no triplets");
  train::FitOptions opt;
  opt.validation = dataset::load_samples(m, a.val_split, mc.k);
  opt.out_dir = fs::path(a.out);
  fs::create_directories(a.out);
  write_json(fs::path(a.out) / "config.json", {{"model", mc}, {"train", tc}});
  train::Trainer<float> trainer(mc, tc, {m.g, m.sigma});
  trainer.fit(tr, opt);
  return kOk;
}

// ---- predictions file --------------------------------------------------------

using ImageKey = std::tuple<std::string, int, std::string>;  // patient, slice, condition

void write_predictions(const fs::path& path, const std::vector<eval::ImageResult>& images) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << "patient,slice,condition,x,y,score\n" << std::setprecision(17);
  for (const auto& img : images) {
    for (const auto& d : img.preds) {
      os << img.patient << ',' << img.slice << ',' << img.condition << ',' << d.x << ',' << d.y << ',' << d.score
         << '\n';
    }
  }
}

std::map<ImageKey, std::vector<heatmap::Detection>> read_predictions(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open predictions " + path.string());
  std::string line;
  std::getline(is, line);
  if (line.rfind("patient,slice,condition,x,y,score", 0) != 0) throw DataError(path.string() + ": bad header");
  std::map<ImageKey, std::vector<heatmap::Detection>> out;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::vector<std::string> f;
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 6) throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 6 fields");
    try {
      out[{f[0], std::stoi(f[1]), f[2]}].push_back({std::stod(f[3]), std::stod(f[4]), std::stod(f[5])});
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  return out;
}

// Ground truth per (patient, slice, condition) for a split.
std::map<ImageKey, std::vector<heatmap::Point2>> ground_truth(const dataset::Manifest& m, const std::string& split) {
  std::map<ImageKey, std::vector<heatmap::Point2>> gts;
  for (const auto& t : m.triplets) {
    if (!split.empty() && t.split != split) continue;
    gts[{t.patient, t.t, t.condition}].push_back({t.x, t.y});
  }
  return gts;
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, predictions, data, split = "val", out;
  eval::EvalConfig ec;
  std::optional<int> k;
};

int cmd_eval(const EvalArgs& a) {
  const auto m = dataset::read_manifest(resolve_data(a.data) / "manifest.json");
  std::vector<eval::ImageResult> images;
  if (!a.predictions.empty()) {
    auto preds = read_predictions(a.predictions);
    auto gts = ground_truth(m, a.split);
    for (auto& [key, g] : gts) {
      auto it = preds.find(key);
      images.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key),
                        it == preds.end() ? std::vector<heatmap::Detection>{} : it->second, g});
      if (it != preds.end()) preds.erase(it);
    }
    for (auto& [key, p] : preds) images.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), p, {}});
  } else {
    auto net = checkpoint::load<float>(a.checkpoint);
    check_compatible(net.config(), m);
    const auto provider = embedding::make_provider(net.config().embedding_provider, net.config().embed_dim,
                                                   net.config().embedding_seed);
    images = train::predict_all(net, dataset::load_samples(m, a.split, a.k.value_or(net.config().k)), *provider);
  }
  const auto r = eval::evaluate(images, a.ec);
  const json j = r;
  if (!a.out.empty()) write_json(a.out, j);
  std::cout << j.dump(2) << '\n';
  return kOk;
}

// ---- predict -----------------------------------------------------------------

struct PredictArgs {
  std::string checkpoint, data, split = "val", condition, out = "predictions.csv";
  std::optional<double> project_root;
  double accept = 0.3;
  std::optional<int> k;
};

int cmd_predict(const PredictArgs& a) {
  if (!a.condition.empty()) embedding::require_condition_word(a.condition);
  const auto m = dataset::read_manifest(resolve_data(a.data) / "manifest.json");
  auto net = checkpoint::load<float>(a.checkpoint);
  check_compatible(net.config(), m);
  const auto provider =
      embedding::make_provider(net.config().embedding_provider, net.config().embed_dim, net.config().embedding_seed);
  auto samples = dataset::load_samples(m, a.split, a.k.value_or(net.config().k));
  if (!a.condition.empty()) {
    // One image per slice, all guided by the requested word.
    std::vector<dataset::Sample> kept;
    std::set<std::pair<std::string, int>> seen;
    for (auto& s : samples) {
      if (!seen.insert({s.patient, s.t}).second) continue;
      if (s.condition != a.condition) s.targets.clear();
      s.condition = a.condition;
      kept.push_back(std::move(s));
    }
    samples = std::move(kept);
  }
  const auto images = train::predict_all(net, samples, *provider);
  write_predictions(a.out, images);
  spdlog::info("wrote detections for {} images to {}", images.size(), a.out);

  if (a.project_root) {
    // A track is the top detection of each slice for one (patient, condition).
    std::map<std::pair<std::string, std::string>, std::vector<geometry::CenterPoint3D>> tracks;
    for (const auto& img : images) {
      auto& tr = tracks[{img.patient, img.condition}];
      if (!img.preds.empty() && img.preds.front().score >= a.accept) {
        tr.push_back({img.preds.front().x, img.preds.front().y, static_cast<double>(img.slice)});
      }
    }
    fs::path roots = fs::path(a.out).replace_extension("").string() + "_roots.csv";
    std::ofstream os(roots);
    if (!os) throw DataError("cannot write " + roots.string());
    os << "patient,condition,slices,s1,s2,tau,z,x,y\n" << std::setprecision(17);
    for (const auto& [key, pts] : tracks) {
      if (pts.size() < 2) {
        spdlog::warn("{} / {}: {} accepted slice(s), root projection skipped", key.first, key.second, pts.size());
        continue;
      }
      try {
        const auto fit = geometry::fit_centerline(pts);
        const auto [x, y] = geometry::project_to_root(fit, *a.project_root);
        os << key.first << ',' << key.second << ',' << pts.size() << ',' << fit.s1 << ',' << fit.s2 << ',' << fit.tau
           << ',' << *a.project_root << ',' << x << ',' << y << '\n';
      } catch (const DegenerateGeometryError& e) {
        spdlog::warn("{} / {}: {}, root projection skipped", key.first, key.second, e.what());
      }
    }
    spdlog::info("wrote root projections to {}", roots.string());
  }
  return kOk;
}

// ---- ablate ------------------------------------------------------------------

struct AblateArgs {
  std::string config, data, out = "ablation", split = "train", val_split = "val";
  int seeds = 3;
  Overrides ov;
};

int cmd_ablate(const AblateArgs& a) {
  if (a.seeds <= 0) throw ConfigError("--seeds must be positive");
  const json cfg = load_config(a.config);
  auto base_m = section<model::ModelConfig>(cfg, "model");
  auto base_t = section<train::TrainConfig>(cfg, "train");
  apply(a.ov, base_m, base_t);
  const auto m = dataset::read_manifest(resolve_data(a.data) / "manifest.json");
  check_compatible(base_m, m);
  const auto tr = dataset::load_samples(m, a.split, base_m.k);
  const auto va = dataset::load_samples(m, a.val_split, base_m.k);
  if (tr.empty() || va.empty()) throw DataError("ablation needs non-empty train and validation splits");
  const std::uint64_t seed0 = a.ov.seed.value_or(base_t.seed);

  json rows = json::array();
  std::ofstream csv;
  fs::create_directories(a.out);
  csv.open(fs::path(a.out) / "ablation.csv");
  csv << "tvp,ctg,sal,ap75_mean,ap75_std,f1_mean,f1_std\n";
  std::cout << "TVP CTG SAL |  AP75 (mean±std) |  F1 (mean±std)\n";
  for (int row = 0; row < 8; ++row) {
    const bool tvp = row & 4, ctg = row & 2, sal = row & 1;
    std::vector<double> aps, f1s;
    for (int s = 0; s < a.seeds; ++s) {
      auto mc = base_m;
      auto tc = base_t;
      mc.use_tvp = tvp;
      mc.use_ctg = ctg;
      tc.use_sal = sal;
      mc.init_seed = tc.seed = seed0 + static_cast<std::uint64_t>(s);
      train::Trainer<float> trainer(mc, tc, {m.g, m.sigma});
      trainer.fit(tr);
      const auto r = train::evaluate_model(trainer.model(), va, trainer.provider());
      aps.push_back(r.ap75);
      f1s.push_back(r.f1);
    }
    auto stats = [](const std::vector<double>& v) {
      double mean = 0.0, var = 0.0;
      for (double x : v) mean += x / v.size();
      for (double x : v) var += (x - mean) * (x - mean) / v.size();
      return std::pair{mean, std::sqrt(var)};
    };
    const auto [apm, aps_d] = stats(aps);
    const auto [f1m, f1s_d] = stats(f1s);
    rows.push_back({{"tvp", tvp}, {"ctg", ctg}, {"sal", sal}, {"ap75", aps}, {"f1", f1s}, {"ap75_mean", apm},
                    {"ap75_std", aps_d}, {"f1_mean", f1m}, {"f1_std", f1s_d}});
    csv << tvp << ',' << ctg << ',' << sal << ',' << apm << ',' << aps_d << ',' << f1m << ',' << f1s_d << '\n';
    std::cout << (tvp ? " on " : " -  ") << (ctg ? " on " : " -  ") << (sal ? " on " : " -  ") << "| " << std::fixed
              << std::setprecision(3) << apm << " ± " << aps_d << "   | " << f1m << " ± " << f1s_d << '\n';
  }
  write_json(fs::path(a.out) / "ablation.json", {{"seeds", a.seeds}, {"rows", rows}});
  return kOk;
}

// ---- plot ------------------------------------------------------------------

struct PlotArgs {
  std::string result, out;
};

int cmd_plot(const PlotArgs& a) {
  std::ifstream is(a.result);
  if (!is) throw DataError("cannot open " + a.result);
  eval::EvalResult r;
  try {
    r = json::parse(is).get<eval::EvalResult>();
  } catch (const json::exception& e) {
    throw DataError(a.result + ": " + e.what());
  }
  json hist = json::array(), pr = json::array();
  const int total = r.histogram.total();
  for (std::size_t i = 0; i < r.histogram.counts.size(); ++i) {
    hist.push_back({{"bin_start", i * r.histogram.bin_width},
                    {"bin_end", (i + 1) * r.histogram.bin_width},
                    {"count", r.histogram.counts[i]},
                    {"fraction", total > 0 ? static_cast<double>(r.histogram.counts[i]) / total : 0.0}});
  }
  for (const auto& p : r.pr) pr.push_back(p);
  const json series = {{"histogram", hist}, {"pr_curve", pr}};
  if (a.out.empty()) {
    std::cout << series.dump(2) << '\n';
    return kOk;
  }
  fs::create_directories(a.out);
  std::ofstream h(fs::path(a.out) / "histogram.csv"), p(fs::path(a.out) / "pr_curve.csv");
  if (!h || !p) throw DataError("cannot write plot series under " + a.out);
  h << "bin_start,bin_end,count,fraction\n";
  for (const auto& b : hist) h << b["bin_start"] << ',' << b["bin_end"] << ',' << b["count"] << ',' << b["fraction"] << '\n';
  p << "threshold,precision,recall\n" << std::setprecision(17);
  for (const auto& q : r.pr) p << q.threshold << ',' << q.precision << ',' << q.recall << '\n';
  return kOk;
}

void add_overrides(CLI::App* c, Overrides& o) {
  c->add_option("--seed", o.seed, "Seed for initialization, shuffling and augmentation");
  c->add_option("--epochs", o.epochs, "Number of training epochs");
  c->add_option("--k", o.k, "Slice interval");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Text-conditioned implant position regression on slice triplets"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off");

  GenArgs gen;
  auto* c_gen = app.add_subcommand("gen-data", "Generate a synthetic phantom dataset");
  c_gen->add_option("--config", gen.config, "JSON config (section \"dataset\")");
  c_gen->add_option("--out", gen.out, std::string("Output directory (default: $") + kDataRootEnv + ")");
  c_gen->add_option("--seed", gen.seed);
  c_gen->add_option("--patients", gen.patients);
  c_gen->add_option("--k", gen.k);
  c_gen->add_option("--slope-profile", gen.slope_profile)->check(CLI::IsMember({"fig2", "uniform", "zero"}));

  TrainArgs tra;
  auto* c_train = app.add_subcommand("train", "Train a model");
  c_train->add_option("--config", tra.config, "JSON config (sections \"model\", \"train\")");
  c_train->add_option("--data", tra.data, "Dataset directory");
  c_train->add_option("--out", tra.out, "Run directory")->required();
  c_train->add_option("--split", tra.split);
  c_train->add_option("--val-split", tra.val_split);
  add_overrides(c_train, tra.ov);

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint or a predictions file");
  auto* o_ck = c_eval->add_option("--checkpoint", ev.checkpoint);
  auto* o_pr = c_eval->add_option("--predictions", ev.predictions);
  o_ck->excludes(o_pr);
  c_eval->add_option("--data", ev.data);
  c_eval->add_option("--split", ev.split);
  c_eval->add_option("--out", ev.out, "Write the result JSON here");
  c_eval->add_option("--iou", ev.ec.iou_threshold);
  c_eval->add_option("--score-threshold", ev.ec.score_threshold);
  c_eval->add_option("--k", ev.k);

  PredictArgs pr;
  auto* c_pred = app.add_subcommand("predict", "Write per-slice detections");
  c_pred->add_option("--checkpoint", pr.checkpoint)->required();
  c_pred->add_option("--data", pr.data);
  c_pred->add_option("--split", pr.split);
  c_pred->add_option("--condition", pr.condition, "Guide every slice with this word");
  c_pred->add_option("--project-root", pr.project_root, "Fit each track and project it to this depth");
  c_pred->add_option("--accept", pr.accept, "Minimum score for a slice to join a track");
  c_pred->add_option("--out", pr.out);
  c_pred->add_option("--k", pr.k);

  AblateArgs ab;
  auto* c_ab = app.add_subcommand("ablate", "Train and evaluate the 8-row component grid");
  c_ab->add_option("--config", ab.config);
  c_ab->add_option("--data", ab.data);
  c_ab->add_option("--out", ab.out);
  c_ab->add_option("--seeds", ab.seeds, "Seeds per row");
  add_overrides(c_ab, ab.ov);

  PlotArgs pl;
  auto* c_plot = app.add_subcommand("plot", "Emit histogram and PR series from an eval result");
  c_plot->add_option("result", pl.result)->required();
  c_plot->add_option("--out", pl.out, "Directory for CSV series (default: JSON on stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (c_gen->parsed()) return cmd_gen_data(gen);
    if (c_train->parsed()) return cmd_train(tra);
    if (c_eval->parsed()) {
      if (ev.checkpoint.empty() && ev.predictions.empty()) throw ConfigError("eval needs --checkpoint or --predictions");
      return cmd_eval(ev);
    }
    if (c_pred->parsed()) return cmd_predict(pr);
    if (c_ab->parsed()) return cmd_ablate(ab);
    if (c_plot->parsed()) return cmd_plot(pl);
  } catch (const ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return kConfig;
  } catch (const DataError& e) {
    spdlog::error("data error: {}", e.what());
    return kData;
  } catch (const NumericError& e) {
    spdlog::error("numeric error: {}", e.what());
    return kNumeric;
  } catch (const ShapeError& e) {
    spdlog::error("config error: {}", e.what());
    return kConfig;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kInternal;
  }
  return kUsage;
}
