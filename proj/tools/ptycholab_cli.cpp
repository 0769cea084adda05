// ptycholab command-line harness: simulate, train, reconstruct, evaluate,
// initializer-study. Every command is deterministic given its config and
// seed; reports embed the config hash.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "ptycholab/io.hpp"
#include "ptycholab/metrics.hpp"
#include "ptycholab/solvers.hpp"
#include "ptycholab/trainer.hpp"

using namespace ptycholab;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct CliError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------- config --

void expect_keys(const json &obj, const std::set<std::string> &allowed,
                 const std::string &context) {
  if (!obj.is_object()) throw CliError("config: " + context + " must be an object");
  for (const auto &[key, _] : obj.items())
    if (!allowed.count(key))
      throw CliError("config: unknown key \"" + key + "\" in " + context);
}

json desk_preset() {
  return json{
      {"image_side", 32},
      {"patch_side", 8},
      {"probe", "A"},
      {"count", 16},
      {"seed", 0},
      {"patterns", json::array({{{"n", 64}, {"spacing", 2}}, {{"n", 16}, {"spacing", 4}}})},
      {"solver",
       {{"algorithm", "wf"},
        {"iterations", 100},
        {"kappa", 1.0},
        {"rho", 0.5},
        {"alpha", 0.5},
        {"eps", 1e-12},
        {"trace", false}}},
      {"methods", json::array({"wf", "awf", "pmace"})},
      {"train",
       {{"train_count", 512},
        {"val_count", 16},
        {"lambda", 1.0},
        {"unroll_depth", 2},
        {"learning_rate", 1e-3},
        {"epochs", 10},
        {"vit",
         {{"token_dim", 32}, {"depth", 2}, {"heads", 4}, {"mlp_ratio", 2}, {"pos_bands", 10}}}}},
  };
}

json paper_preset() {
  json cfg = desk_preset();
  cfg["image_side"] = 800;
  cfg["patch_side"] = 256;
  cfg["patterns"] = json::array({{{"n", 256}, {"spacing", 5}}});
  cfg["noise"] = {{"peak_rate", 1e5}};
  cfg["count"] = 1500;
  cfg["train"] = {{"train_count", 60000}, {"val_count", 1500},   {"lambda", 1.0},
                  {"unroll_depth", 3},    {"learning_rate", 1e-5}, {"epochs", 30},
                  {"vit",
                   {{"token_dim", 256}, {"depth", 6}, {"heads", 8}, {"mlp_ratio", 2},
                    {"pos_bands", 10}}}};
  return cfg;
}

struct Options {
  std::string config_path;
  std::string preset = "desk";
  std::optional<std::uint64_t> seed;
  std::string out = "out";
};

void validate_config(const json &cfg) {
  expect_keys(cfg, {"image_side", "patch_side", "probe", "count", "seed", "patterns",
                    "noise", "solver", "methods", "train", "dataset", "dataset_b",
                    "checkpoint"},
              "top level");
  for (const auto &p : cfg.at("patterns"))
    expect_keys(p, {"n", "spacing"}, "patterns[]");
  if (cfg.contains("noise") && !cfg["noise"].is_null())
    expect_keys(cfg["noise"], {"peak_rate"}, "noise");
  expect_keys(cfg.at("solver"),
              {"algorithm", "iterations", "step_size", "kappa", "rho", "alpha", "eps",
               "trace"},
              "solver");
  expect_keys(cfg.at("train"),
              {"train_count", "val_count", "lambda", "unroll_depth", "learning_rate",
               "epochs", "vit"},
              "train");
  expect_keys(cfg.at("train").at("vit"),
              {"token_dim", "depth", "heads", "mlp_ratio", "pos_bands"}, "train.vit");
}

json load_config(const Options &opt) {
  json cfg;
  if (opt.preset == "desk")
    cfg = desk_preset();
  else if (opt.preset == "paper")
    cfg = paper_preset();
  else
    throw CliError("unknown preset \"" + opt.preset + "\" (expected desk or paper)");
  if (!opt.config_path.empty()) {
    if (!fs::exists(opt.config_path))
      throw CliError("config file not found: " + opt.config_path);
    json user = json::parse(io::read_text(opt.config_path));
    cfg.merge_patch(user);
  }
  if (opt.seed) cfg["seed"] = *opt.seed;
  validate_config(cfg);
  for (const char *key : {"dataset", "dataset_b", "checkpoint"})
    if (cfg.contains(key) && !fs::exists(cfg[key].get<std::string>()))
      throw CliError(std::string("config: path for \"") + key +
                     "\" does not exist: " + cfg[key].get<std::string>());
  return cfg;
}

std::string config_hash(const json &cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(io::fnv1a(cfg.dump())));
  return buf;
}

SolverConfig solver_config(const json &cfg) {
  const json &s = cfg.at("solver");
  SolverConfig sc;
  std::string alg = s.value("algorithm", "wf");
  if (alg == "wf")
    sc.algorithm = Algorithm::WF;
  else if (alg == "awf")
    sc.algorithm = Algorithm::AWF;
  else if (alg == "pmace")
    sc.algorithm = Algorithm::PMACE;
  else if (alg != "ptychodv" && alg != "ptychodv+pmace")
    throw CliError("solver.algorithm: unknown method \"" + alg + "\"");
  sc.iterations = s.value("iterations", 100);
  if (s.contains("step_size") && !s["step_size"].is_null())
    sc.step_size = s["step_size"].get<double>();
  sc.kappa = s.value("kappa", 1.0);
  sc.rho = s.value("rho", 0.5);
  sc.alpha = s.value("alpha", 0.5);
  sc.eps = s.value("eps", 1e-12);
  sc.trace = s.value("trace", false);
  return sc;
}

std::uint64_t sample_noise_seed(std::uint64_t seed, std::size_t index) {
  return seed ^ (0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(index) + 1));
}

// ---------------------------------------------------------------- dataset --

struct Dataset {
  std::size_t image_side = 0;
  std::size_t patch_side = 0;
  Probe probe;
  std::optional<double> peak_rate;
  struct Sample {
    ComplexGrid truth;
    ScanGrid grid;
    DiffractionSet data;
  };
  std::vector<Sample> samples;
};

int cmd_simulate(const json &cfg, const fs::path &out) {
  std::size_t image_side = cfg.at("image_side");
  std::size_t patch_side = cfg.at("patch_side");
  std::size_t count = cfg.at("count");
  std::uint64_t seed = cfg.at("seed");
  std::optional<double> peak_rate;
  if (cfg.contains("noise") && !cfg["noise"].is_null())
    peak_rate = cfg["noise"].at("peak_rate").get<double>();
  Probe probe = make_probe(cfg.at("probe"), patch_side, seed);

  fs::create_directories(out);
  io::write_tensor(out / "probe.ptyt", probe.grid);
  json manifest;
  manifest["format"] = "ptycholab-dataset-v1";
  manifest["config_hash"] = config_hash(cfg);
  manifest["image_side"] = image_side;
  manifest["patch_side"] = patch_side;
  manifest["probe"] = cfg.at("probe");
  manifest["seed"] = seed;
  manifest["count"] = count;
  manifest["noise"] = peak_rate ? json{{"peak_rate", *peak_rate}} : json(nullptr);
  manifest["samples"] = json::array();

  const json &patterns = cfg.at("patterns");
  for (std::size_t i = 0; i < count; ++i) {
    const json &pat = patterns[i % patterns.size()];
    PatternSpec spec{pat.at("n"), pat.at("spacing")};
    GroundTruthSample truth = gen_sample(image_side, seed, i);
    std::uint64_t noise_seed = sample_noise_seed(seed, i);
    Measured meas;
    try {
      meas = simulate_measurements(truth.image, probe, spec, patch_side, peak_rate,
                                   noise_seed);
    } catch (const GeometryError &e) {
      throw CliError("simulate: invalid geometry for pattern n=" +
                     std::to_string(spec.n_locations) + " spacing=" +
                     std::to_string(spec.spacing) + " at image side " +
                     std::to_string(image_side) + ": " + e.what());
    }
    char leaf[32];
    std::snprintf(leaf, sizeof leaf, "sample_%03zu", i);
    fs::path dir = out / leaf;
    fs::create_directories(dir);
    io::write_tensor(dir / "truth.ptyt", truth.image);
    std::size_t n = meas.data.count(), s = patch_side;
    RealTensor amps({n, s, s});
    RealTensor coords({n, 2});
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t j = 0; j < s * s; ++j)
        amps.data[k * s * s + j] = meas.data.amplitudes[k].data[j];
      coords.at(k, 0) = meas.data.coords[k].first;
      coords.at(k, 1) = meas.data.coords[k].second;
    }
    io::write_tensor(dir / "amplitudes.ptyt", amps);
    io::write_tensor(dir / "coords.ptyt", coords);
    if (i == 0) io::export_image(dir / "truth", truth.image);
    manifest["samples"].push_back({{"dir", leaf},
                                   {"pattern", {{"n", spec.n_locations}, {"spacing", spec.spacing}}},
                                   {"noise_seed", noise_seed}});
  }
  io::write_text(out / "manifest.json", manifest.dump(2) + "\n");
  std::cout << "simulated " << count << " samples into " << out.string() << "\n";
  return 0;
}

Dataset load_dataset(const fs::path &dir) {
  if (!fs::exists(dir / "manifest.json"))
    throw CliError("dataset manifest not found in " + dir.string());
  json manifest = json::parse(io::read_text(dir / "manifest.json"));
  if (manifest.value("format", "") != "ptycholab-dataset-v1")
    throw CliError("unknown dataset format in " + dir.string());
  Dataset ds;
  ds.image_side = manifest.at("image_side");
  ds.patch_side = manifest.at("patch_side");
  ds.probe.grid = io::read_complex_grid(dir / "probe.ptyt");
  ds.probe.label = manifest.at("probe");
  if (!manifest.at("noise").is_null())
    ds.peak_rate = manifest["noise"].at("peak_rate").get<double>();
  for (const auto &entry : manifest.at("samples")) {
    Dataset::Sample sample;
    fs::path sdir = dir / entry.at("dir").get<std::string>();
    sample.truth = io::read_complex_grid(sdir / "truth.ptyt");
    sample.grid = make_scan_grid(ds.image_side, ds.patch_side,
                                 entry.at("pattern").at("n"),
                                 entry.at("pattern").at("spacing"));
    RealTensor amps = io::read_real_tensor(sdir / "amplitudes.ptyt");
    std::size_t n = amps.shape.at(0), s = ds.patch_side;
    for (std::size_t k = 0; k < n; ++k) {
      RealTensor a({s, s});
      for (std::size_t j = 0; j < s * s; ++j) a.data[j] = amps.data[k * s * s + j];
      sample.data.amplitudes.push_back(std::move(a));
      sample.data.coords.push_back(sample.grid.center(k));
    }
    sample.data.noise.poisson = ds.peak_rate.has_value();
    if (ds.peak_rate) sample.data.noise.peak_rate = *ds.peak_rate;
    sample.data.noise.seed = entry.at("noise_seed");
    ds.samples.push_back(std::move(sample));
  }
  return ds;
}

// ---------------------------------------------------------------- methods --

struct MethodRun {
  ComplexGrid image;
  ReconTrace trace;
};

MethodRun run_method(const std::string &method, const Dataset::Sample &sample,
                     const Probe &probe, SolverConfig sc,
                     const PtychoDVModel *model) {
  if (method == "ptychodv" || method == "ptychodv+pmace") {
    if (!model) throw CliError("method " + method + " needs a checkpoint");
    PtychoDVModel local = *model;
    local.gamma = wf_step_size(probe, sample.grid);
    InferenceResult inf = infer(local, sample.data, probe, sample.grid);
    if (method == "ptychodv") return {std::move(inf.image), {}};
    auto res = run_pmace(inf.image, sample.data, probe, sample.grid, sc);
    return {std::move(res.image), std::move(res.trace)};
  }
  ComplexGrid x0 = init_image(sample.data, probe, sample.grid);
  ReconResult res;
  if (method == "wf")
    res = run_wf(x0, sample.data, probe, sample.grid, sc);
  else if (method == "awf")
    res = run_awf(x0, sample.data, probe, sample.grid, sc);
  else if (method == "pmace")
    res = run_pmace(x0, sample.data, probe, sample.grid, sc);
  else
    throw CliError("unknown method \"" + method + "\"");
  return {std::move(res.image), std::move(res.trace)};
}

MethodStats measure_method(const std::string &method, const Dataset &ds,
                           SolverConfig sc, const PtychoDVModel *model,
                           const fs::path *image_out) {
  MethodStats stats;
  stats.label = method;
  double seconds = 0.0;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto &sample = ds.samples[i];
    auto t0 = std::chrono::steady_clock::now();
    MethodRun run = run_method(method, sample, ds.probe, sc, model);
    seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    RealTensor mask = lambda_map(ds.probe, sample.grid, 2.0);
    stats.nrmse_values.push_back(nrmse(run.image, sample.truth, &mask));
    if (image_out && i == 0) {
      io::write_tensor(*image_out / (method + "_recon.ptyt"), run.image);
      io::export_image(*image_out / (method + "_recon"), run.image);
      if (!run.trace.objective.empty())
        io::write_text(*image_out / (method + "_trace.csv"), run.trace.to_csv());
    }
  }
  stats.seconds_per_image = seconds / static_cast<double>(ds.samples.size());
  return stats;
}

// --------------------------------------------------------------- commands --

int cmd_train(const json &cfg, const fs::path &out) {
  const json &t = cfg.at("train");
  TrainConfig tc;
  tc.train_count = t.at("train_count");
  tc.val_count = t.at("val_count");
  tc.image_side = cfg.at("image_side");
  tc.patch_side = cfg.at("patch_side");
  tc.patterns.clear();
  for (const auto &p : cfg.at("patterns"))
    tc.patterns.push_back({p.at("n"), p.at("spacing")});
  if (cfg.contains("noise") && !cfg["noise"].is_null())
    tc.peak_rate = cfg["noise"].at("peak_rate").get<double>();
  tc.lambda = t.at("lambda");
  tc.unroll_depth = t.at("unroll_depth");
  tc.learning_rate = t.at("learning_rate");
  tc.epochs = t.at("epochs");
  tc.seed = cfg.at("seed");
  tc.probe_kind = cfg.at("probe");
  const json &v = t.at("vit");
  tc.vit.token_dim = v.at("token_dim");
  tc.vit.depth = v.at("depth");
  tc.vit.heads = v.at("heads");
  tc.vit.mlp_ratio = v.at("mlp_ratio");
  tc.vit.pos_bands = v.at("pos_bands");
  tc.vit.patch_side = tc.patch_side;

  TrainResult result = train(tc);
  fs::create_directories(out);
  checkpoint_save(result.model, out / "checkpoint");
  io::write_text(out / "train_log.csv",
                 "# config " + config_hash(cfg) + "\n" + result.log_csv());
  json manifest{{"format", "ptycholab-train-v1"},
                {"config_hash", config_hash(cfg)},
                {"epochs", result.log.size()},
                {"final_train_loss", result.log.back().train_loss},
                {"final_val_nrmse", result.log.back().val_nrmse}};
  io::write_text(out / "manifest.json", manifest.dump(2) + "\n");
  std::cout << "trained " << result.log.size() << " epochs; final val NRMSE "
            << result.log.back().val_nrmse << "\n";
  return 0;
}

int cmd_reconstruct(const json &cfg, const fs::path &out) {
  if (!cfg.contains("dataset")) throw CliError("reconstruct: config needs \"dataset\"");
  Dataset ds = load_dataset(cfg["dataset"].get<std::string>());
  SolverConfig sc = solver_config(cfg);
  std::string method = cfg.at("solver").value("algorithm", "wf");
  std::optional<PtychoDVModel> model;
  if (cfg.contains("checkpoint"))
    model = checkpoint_load(cfg["checkpoint"].get<std::string>());
  if ((method == "ptychodv" || method == "ptychodv+pmace") && !model)
    throw CliError("reconstruct: method " + method + " needs \"checkpoint\"");
  std::vector<const ComplexGrid *> refs;
  for (auto &sample : ds.samples) refs.push_back(&sample.truth);
  if (sc.trace && !ds.samples.empty()) sc.reference = refs[0];

  fs::create_directories(out);
  MethodStats stats =
      measure_method(method, ds, sc, model ? &*model : nullptr, &out);
  std::string report = "# config " + config_hash(cfg) + "\n" + report_csv({stats});
  io::write_text(out / "report.csv", report);
  io::write_text(out / "report.txt", stats.label + ": " + format_row(stats) + "\n");
  std::cout << stats.label << ": " << format_row(stats) << "\n";
  return 0;
}

int cmd_evaluate(const json &cfg, const fs::path &out) {
  if (!cfg.contains("dataset")) throw CliError("evaluate: config needs \"dataset\"");
  Dataset ds = load_dataset(cfg["dataset"].get<std::string>());
  SolverConfig sc = solver_config(cfg);
  std::optional<PtychoDVModel> model;
  if (cfg.contains("checkpoint"))
    model = checkpoint_load(cfg["checkpoint"].get<std::string>());
  std::vector<MethodStats> table;
  for (const auto &m : cfg.at("methods")) {
    std::string method = m.get<std::string>();
    table.push_back(measure_method(method, ds, sc, model ? &*model : nullptr, nullptr));
  }
  fs::create_directories(out);
  std::string report = "# config " + config_hash(cfg) + "\n" + report_csv(table);
  io::write_text(out / "evaluate.csv", report);
  std::string rows;
  for (const auto &stats : table) rows += stats.label + ": " + format_row(stats) + "\n";
  io::write_text(out / "evaluate.txt", rows);
  std::cout << rows;
  return 0;
}

int cmd_initializer_study(const json &cfg, const fs::path &out) {
  if (!cfg.contains("dataset") || !cfg.contains("checkpoint"))
    throw CliError("initializer-study: config needs \"dataset\" and \"checkpoint\"");
  PtychoDVModel model = checkpoint_load(cfg["checkpoint"].get<std::string>());
  SolverConfig sc = solver_config(cfg);
  sc.algorithm = Algorithm::PMACE;

  std::vector<std::pair<std::string, Dataset>> sets;
  sets.emplace_back("A", load_dataset(cfg["dataset"].get<std::string>()));
  if (cfg.contains("dataset_b"))
    sets.emplace_back("B", load_dataset(cfg["dataset_b"].get<std::string>()));

  std::vector<MethodStats> table;
  for (auto &[label, ds] : sets) {
    MethodStats base = measure_method("pmace", ds, sc, nullptr, nullptr);
    base.label = "pmace-" + label + "-" + std::to_string(sc.iterations) + "-baseline";
    MethodStats warm = measure_method("ptychodv+pmace", ds, sc, &model, nullptr);
    warm.label = "pmace-" + label + "-" + std::to_string(sc.iterations) + "-ptychodv";
    table.push_back(std::move(base));
    table.push_back(std::move(warm));
  }
  fs::create_directories(out);
  std::string report = "# config " + config_hash(cfg) + "\n" + report_csv(table);
  io::write_text(out / "study.csv", report);
  std::string rows;
  for (const auto &stats : table) rows += stats.label + ": " + format_row(stats) + "\n";
  io::write_text(out / "study.txt", rows);
  std::cout << rows;
  return 0;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"ptycholab: ptychographic imaging laboratory"};
  app.require_subcommand(1);

  Options opt;
  std::string command;
  const std::pair<const char *, const char *> commands[] = {
      {"simulate", "generate a measurement dataset"},
      {"train", "train a reconstruction network on simulated data"},
      {"reconstruct", "run one method on a dataset and export images"},
      {"evaluate", "compare methods on a dataset and emit a CSV report"},
      {"initializer-study", "baseline vs network-warm-started consensus solver"},
  };
  for (const auto &[name, blurb] : commands) {
    CLI::App *sub = app.add_subcommand(name, blurb);
    sub->add_option("--config", opt.config_path, "config file (JSON)");
    sub->add_option("--preset", opt.preset, "base preset: desk or paper");
    sub->add_option("--seed", opt.seed, "override the config seed");
    sub->add_option("--out", opt.out, "output directory");
    sub->callback([&command, name] { command = name; });
  }

  CLI11_PARSE(app, argc, argv);
  try {
    json cfg = load_config(opt);
    fs::path out = opt.out;
    if (command == "simulate") return cmd_simulate(cfg, out);
    if (command == "train") return cmd_train(cfg, out);
    if (command == "reconstruct") return cmd_reconstruct(cfg, out);
    if (command == "evaluate") return cmd_evaluate(cfg, out);
    if (command == "initializer-study") return cmd_initializer_study(cfg, out);
    throw CliError("no command selected");
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
