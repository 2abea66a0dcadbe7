#pragma once

// Command-line front end. `run` is the whole program; tools/romforge.cpp only
// forwards argv. Exit codes: 0 ok, 2 configuration, 3 I/O, 4 numerical.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "romforge/data_model.hpp"
#include "romforge/error.hpp"
#include "romforge/gca.hpp"
#include "romforge/metrics.hpp"
#include "romforge/plot.hpp"
#include "romforge/rom.hpp"
#include "romforge/snapshot_io.hpp"

namespace romforge::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitNumerical = 4;

/// Comma-separated values and inclusive `start:stop:step` ranges,
/// e.g. "20:80:5" or "20,35,50:60:10".
inline std::vector<double> parse_list(const std::string& text) {
  auto number = [&](const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != s.size() || !std::isfinite(v))
      throw ConfigError("'" + s + "' in list '" + text + "' is not a number");
    return v;
  };
  std::vector<double> out;
  std::stringstream ss(text);
  std::string token;
  while (std::getline(ss, token, ',')) {
    token.erase(std::remove_if(token.begin(), token.end(), [](unsigned char c) { return std::isspace(c); }),
                token.end());
    if (token.empty()) throw ConfigError("empty entry in list '" + text + "'");
    const auto first = token.find(':');
    if (first == std::string::npos) {
      out.push_back(number(token));
      continue;
    }
    const auto second = token.find(':', first + 1);
    if (second == std::string::npos || token.find(':', second + 1) != std::string::npos)
      throw ConfigError("range '" + token + "' must be start:stop:step");
    const double start = number(token.substr(0, first));
    const double stop = number(token.substr(first + 1, second - first - 1));
    const double step = number(token.substr(second + 1));
    if (!(step > 0.0)) throw ConfigError("range '" + token + "' needs a positive step");
    if (stop < start) throw ConfigError("range '" + token + "' has stop < start");
    const auto n = static_cast<long>(std::floor((stop - start) / step + 1e-9));
    for (long k = 0; k <= n; ++k) out.push_back(start + static_cast<double>(k) * step);
  }
  return out;
}

/// ROMFORGE_THREADS caps the worker count; default is the hardware count.
inline unsigned thread_budget() {
  unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("ROMFORGE_THREADS"); env && *env) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 1) throw ConfigError("ROMFORGE_THREADS must be a positive integer, got '" + std::string(env) + "'");
    hw = std::min(hw, static_cast<unsigned>(v));
  }
  return hw;
}

namespace detail {

inline std::string absolute(const std::string& p) {
  return p.empty() ? p : std::filesystem::absolute(p).lexically_normal().string();
}

/// A trained model of either kind behind one predictor interface.
struct Model {
  std::string kind;
  std::optional<PodGprRom> rom;
  std::optional<gca::LoadedGca> net;
  std::optional<gca::Graph> graph;

  Eigen::Index n_nodes() const { return rom ? rom->basis.n_nodes() : graph->n_nodes; }

  Eigen::VectorXd predict(double dt) const {
    return rom ? predict_distortion(*rom, dt).mean_field : gca::predict_gca(net->model, *graph, dt);
  }

  bool extrapolation(double dt) const {
    if (rom) return is_extrapolation(*rom, dt);
    const auto& n = net->model.norm;
    return dt < n.dt_offset || dt > n.dt_offset + n.dt_scale;
  }
};

inline Model load_model(const std::filesystem::path& dir) {
  Model m;
  if (std::filesystem::exists(dir / "gca.json")) {
    m.kind = "gca";
    m.net = gca::load_gca(dir);
    m.graph = gca::build_graph(m.net->mesh);
  } else {
    m.kind = "pod-gpr";
    m.rom = load_rom(dir);
  }
  return m;
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw WriteError("cannot create directory '" + dir.string() + "': " + ec.message());
}

// ---------------------------------------------------------------- options

struct GenOptions {
  std::string out, dwell_times;
  int layers = 34, radial = 6, theta = 16;
  double noise = 0.0;
  std::uint64_t seed = 0;
};

struct TrainOptions {
  std::string model, data, train, out, val;
  double threshold = 0.9999;
  std::optional<double> jitter;
  int restarts = 8;
  bool center = true;
  std::uint64_t seed = 0;
  double lambda = 0.5, lr_max = 1e-3, lr_min = 1e-5, weight_decay = 1e-4, noise = 0.01;
  int patience = 50, epochs = 2000, t0 = 50, mult = 2;
};

struct PredictOptions {
  std::string model_dir, out;
  double dt = 0.0;
};

struct EvalOptions {
  std::string model_dir, data, test, plots, report;
  int modes = 4, repeats = 5;
};

struct BenchOptions {
  std::string model_dir, dts;
  int repeats = 20;
};

// ---------------------------------------------------------------- commands

inline nlohmann::json cmd_gen(const GenOptions& o) {
  SyntheticConfig c;
  c.n_radial = o.radial;
  c.n_theta = o.theta;
  c.n_layers = o.layers;
  c.dwell_times = parse_list(o.dwell_times);
  c.noise_sigma = o.noise;
  c.seed = o.seed;
  const auto tensor = generate_synthetic_dataset(c);
  save_snapshot_tensor(tensor, o.out);
  return {{"command", "gen"}, {"out", o.out}, {"N_mu", tensor.size()}, {"N_h", tensor.n_nodes()},
          {"N_t", tensor.n_steps()}};
}

inline nlohmann::json cmd_train(const TrainOptions& o) {
  const auto data = load_snapshot_tensor(o.data);
  const auto train_dts = parse_list(o.train);
  if (train_dts.empty()) throw ConfigError("train: --train is empty");
  const auto val_dts = parse_list(o.val);
  const auto [train, val] = split_dataset(data, train_dts, val_dts);
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  nlohmann::json line{{"command", "train"}, {"model", o.model}, {"out", o.out}, {"n_train", train.size()}};

  if (o.model == "pod-gpr") {
    if (!val_dts.empty()) throw ConfigError("train: --val applies to gca only");
    RomConfig rc;
    rc.energy_threshold = o.threshold;
    rc.jitter = o.jitter;
    rc.restarts = o.restarts;
    rc.seed = o.seed;
    rc.center = o.center;
    rc.threads = thread_budget();
    const auto rom = train_pod_gpr(train, rc);
    const double seconds = std::chrono::duration<double>(clock::now() - t0).count();
    save_rom(rom, o.out);
    write_json_file({{"train_seconds", seconds}}, std::filesystem::path(o.out) / "timing.json");
    line["r"] = rom.rank();
    line["energy_captured"] = rom.basis.energy_captured;
    line["train_seconds"] = seconds;
    return line;
  }

  gca::GcaTrainConfig gc;
  gc.lambda = o.lambda;
  gc.schedule = {o.lr_max, o.lr_min, o.t0, o.mult};
  gc.adamw.weight_decay = o.weight_decay;
  gc.patience = o.patience;
  gc.noise_sigma = o.noise;
  gc.max_epochs = o.epochs;
  gc.seed = o.seed;
  const auto graph = gca::build_graph(data.mesh());
  const auto result = gca::train_gca(train, val, graph, gc);
  const double seconds = std::chrono::duration<double>(clock::now() - t0).count();
  gca::save_gca(result.model, data.mesh(), gc, o.out);
  const auto history = std::filesystem::path(o.out) / "history.csv";
  gca::write_history_csv(result.history, history);
  write_json_file({{"train_seconds", seconds}}, std::filesystem::path(o.out) / "timing.json");
  line["epochs_run"] = result.history.size();
  line["best_epoch"] = result.best_epoch;
  line["best_val_loss"] = result.history[static_cast<std::size_t>(result.best_epoch)].val_loss;
  line["history"] = history.string();
  line["train_seconds"] = seconds;
  return line;
}

inline nlohmann::json cmd_predict(const PredictOptions& o) {
  if (!std::isfinite(o.dt)) throw ConfigError("predict: --dt must be finite");
  const auto model = load_model(o.model_dir);
  const Eigen::VectorXd field = model.predict(o.dt);
  Eigen::Index argmax = 0;
  const double peak = field.maxCoeff(&argmax);
  const auto parent = std::filesystem::path(o.out).parent_path();
  if (!parent.empty()) ensure_dir(parent);
  write_snapshot_file(field, o.out);

  nlohmann::json side{{"dt", o.dt},
                      {"model", model.kind},
                      {"field", o.out},
                      {"N_h", field.size()},
                      {"max_displacement", peak},
                      {"max_node", argmax},
                      {"extrapolation", model.extrapolation(o.dt)}};
  if (model.rom) {
    const auto p = predict_distortion(*model.rom, o.dt);
    side["max_node_band_95"] = {p.lower_95(argmax), p.upper_95(argmax)};
  }
  const std::string sidecar = o.out + ".json";
  write_json_file(side, sidecar, 2);
  side["command"] = "predict";
  side["sidecar"] = sidecar;
  return side;
}

inline nlohmann::json cmd_eval(const EvalOptions& o) {
  const auto test_dts = parse_list(o.test);
  if (test_dts.empty()) throw ConfigError("eval: --test is empty");
  const auto model = load_model(o.model_dir);
  const auto data = load_snapshot_tensor(o.data);
  if (data.n_nodes() != model.n_nodes())
    throw ShapeError("eval: data has " + std::to_string(data.n_nodes()) + " nodes, model expects " +
                     std::to_string(model.n_nodes()));
  const auto test = split_dataset(data, {}, test_dts).second;
  auto predictor = [&](double dt) { return model.predict(dt); };
  const auto rows = evaluate(test, predictor);

  double worst_l2 = 0.0, worst_delta = 0.0;
  for (const auto& r : rows) {
    worst_l2 = std::max(worst_l2, r.relative_l2);
    worst_delta = std::max(worst_delta, std::abs(r.max_disp_pred - r.max_disp_true));
  }
  const nlohmann::json report{{"model", model.kind},
                              {"test_dwell_times", test_dts},
                              {"rows", rows_to_json(rows)},
                              {"summary", {{"max_relative_l2", worst_l2}, {"max_disp_delta", worst_delta}}}};
  const std::filesystem::path plots = o.plots;
  ensure_dir(plots);
  const std::filesystem::path report_file = o.report.empty() ? plots / "report.json" : std::filesystem::path(o.report);
  if (report_file.has_parent_path()) ensure_dir(report_file.parent_path());
  write_json_file(report, report_file, 2);

  emit_max_displacement_plot(rows, plots / "max_displacement",
                             "Maximum displacement, " + model.kind + " vs ground truth");
  if (model.rom) {
    std::vector<double> dts = test_dts;
    for (const auto& p : model.rom->training_params) dts.push_back(p.dwell_time);
    std::sort(dts.begin(), dts.end());
    dts.erase(std::unique(dts.begin(), dts.end()), dts.end());
    const int k = static_cast<int>(std::min<Eigen::Index>(o.modes, model.rom->rank()));
    emit_coefficient_plot(*model.rom, dts, k, plots / "coefficients");
  }

  const auto timing = time_predictor(predictor, test_dts, o.repeats);
  nlohmann::json timing_json{{"predict_seconds_mean", timing.mean_seconds},
                             {"predict_seconds_min", timing.min_seconds}};
  const auto train_timing = std::filesystem::path(o.model_dir) / "timing.json";
  if (std::filesystem::exists(train_timing))
    timing_json["train_seconds"] = read_json_file(train_timing).value("train_seconds", 0.0);
  write_json_file(timing_json, plots / "timing.json", 2);

  return {{"command", "eval"},
          {"model", model.kind},
          {"report", report_file.string()},
          {"rows", rows.size()},
          {"max_relative_l2", worst_l2},
          {"max_disp_delta", worst_delta},
          {"predict_seconds_mean", timing.mean_seconds}};
}

inline nlohmann::json cmd_bench(const BenchOptions& o) {
  const auto dts = parse_list(o.dts);
  const auto model = load_model(o.model_dir);
  const auto t = time_predictor([&](double dt) { return model.predict(dt); }, dts, o.repeats);
  return {{"command", "bench"}, {"model", model.kind}, {"n_dts", dts.size()}, {"repeats", o.repeats},
          {"mean_seconds", t.mean_seconds}, {"min_seconds", t.min_seconds}};
}

// ---------------------------------------------------------------- config merge

inline std::string config_value(const std::string& key, const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number()) return v.dump();
  if (v.is_array()) {
    std::string out;
    for (const auto& e : v) {
      if (!e.is_number()) throw ConfigError("config key '" + key + "': list entries must be numbers");
      out += (out.empty() ? "" : ",") + e.dump();
    }
    return out;
  }
  throw ConfigError("config key '" + key + "' has an unsupported value type");
}

/// Turns a --config JSON object into `--key=value` arguments. Relative paths
/// are resolved against the config file's directory.
inline std::vector<std::string> config_args(const std::filesystem::path& file, const CLI::App& sub,
                                            const std::set<std::string>& path_keys) {
  const auto j = read_json_file(file);
  if (!j.is_object()) throw ConfigError("config '" + file.string() + "' must be a JSON object");
  std::vector<std::string> args;
  for (const auto& [raw, value] : j.items()) {
    std::string key = raw;
    std::replace(key.begin(), key.end(), '_', '-');
    if (key == "config" || !sub.get_option_no_throw("--" + key))
      throw ConfigError("config '" + file.string() + "': unknown key '" + raw + "' for '" + sub.get_name() + "'");
    if (value.is_null()) continue;
    std::string text = config_value(raw, value);
    if (path_keys.contains(key) && !text.empty() && std::filesystem::path(text).is_relative())
      text = (std::filesystem::absolute(file).parent_path() / text).lexically_normal().string();
    args.push_back("--" + key + "=" + text);
  }
  return args;
}

inline std::optional<std::string> find_config(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw ConfigError("--config needs a file");
      return args[i + 1];
    }
    if (args[i].rfind("--config=", 0) == 0) return args[i].substr(9);
  }
  return std::nullopt;
}

}  // namespace detail

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  using namespace detail;
  CLI::App app{"romforge: reduced-order surrogates for additive-manufacturing distortion fields", "romforge"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  std::string config_file;

  GenOptions gen;
  auto* g = app.add_subcommand("gen", "generate a synthetic snapshot tensor");
  g->add_option("--out", gen.out, "output directory")->required();
  g->add_option("--dwell-times", gen.dwell_times, "dwell times, e.g. 20:80:5")->required();
  g->add_option("--layers", gen.layers, "layers (= time steps)")->capture_default_str();
  g->add_option("--radial", gen.radial, "radial node rings")->capture_default_str();
  g->add_option("--theta", gen.theta, "nodes per ring")->capture_default_str();
  g->add_option("--noise", gen.noise, "noise sigma [mm]")->capture_default_str();
  g->add_option("--seed", gen.seed, "noise seed")->capture_default_str();

  TrainOptions tr;
  auto* t = app.add_subcommand("train", "train a pod-gpr or gca model");
  t->add_option("--model", tr.model, "pod-gpr | gca")->required()->check(CLI::IsMember({"pod-gpr", "gca"}));
  t->add_option("--data", tr.data, "snapshot tensor directory")->required();
  t->add_option("--train", tr.train, "training dwell times")->required();
  t->add_option("--out", tr.out, "archive directory")->required();
  t->add_option("--seed", tr.seed)->capture_default_str();
  t->add_option("--threshold", tr.threshold, "pod-gpr: POD energy threshold")->capture_default_str();
  t->add_option("--jitter", tr.jitter, "pod-gpr: GPR diagonal jitter (default 1e-8 * target variance)");
  t->add_option("--restarts", tr.restarts, "pod-gpr: optimizer restarts per mode")->capture_default_str();
  t->add_option("--center", tr.center, "pod-gpr: subtract the snapshot mean")->capture_default_str();
  t->add_option("--val", tr.val, "gca: validation dwell times");
  t->add_option("--lambda", tr.lambda, "gca: latent consistency weight")->capture_default_str();
  t->add_option("--patience", tr.patience, "gca: early-stopping patience")->capture_default_str();
  t->add_option("--epochs", tr.epochs, "gca: maximum epochs")->capture_default_str();
  t->add_option("--lr-max", tr.lr_max, "gca")->capture_default_str();
  t->add_option("--lr-min", tr.lr_min, "gca")->capture_default_str();
  t->add_option("--t0", tr.t0, "gca: first warm-restart period [epochs]")->capture_default_str();
  t->add_option("--mult", tr.mult, "gca: warm-restart period multiplier")->capture_default_str();
  t->add_option("--weight-decay", tr.weight_decay, "gca: AdamW decoupled decay")->capture_default_str();
  t->add_option("--noise", tr.noise, "gca: denoising noise, normalized units")->capture_default_str();

  PredictOptions pr;
  auto* p = app.add_subcommand("predict", "predict the final-step field at one dwell time");
  p->add_option("--model-dir", pr.model_dir)->required();
  p->add_option("--dt", pr.dt)->required();
  p->add_option("--out", pr.out, "SNPT field file; a .json sidecar is written next to it")->required();

  EvalOptions ev;
  auto* e = app.add_subcommand("eval", "evaluate on held-out dwell times and write plots");
  e->add_option("--model-dir", ev.model_dir)->required();
  e->add_option("--data", ev.data)->required();
  e->add_option("--test", ev.test, "test dwell times")->required();
  e->add_option("--plots", ev.plots, "plot output directory")->required();
  e->add_option("--report", ev.report, "report JSON (default <plots>/report.json)");
  e->add_option("--modes", ev.modes, "modes in the coefficient plot")->capture_default_str();
  e->add_option("--repeats", ev.repeats, "timing repeats")->capture_default_str();

  BenchOptions be;
  auto* b = app.add_subcommand("bench", "time predictions");
  b->add_option("--model-dir", be.model_dir)->required();
  b->add_option("--dt", be.dts, "dwell times")->required();
  b->add_option("--repeats", be.repeats)->capture_default_str();

  for (auto* sub : {g, t, p, e, b}) sub->add_option("--config", config_file, "JSON file of option defaults");
  const std::map<std::string, std::set<std::string>> path_keys{
      {"gen", {"out"}}, {"train", {"data", "out"}}, {"predict", {"model-dir", "out"}},
      {"eval", {"model-dir", "data", "plots", "report"}}, {"bench", {"model-dir"}}};

  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    try {
      if (!args.empty() && args[0][0] != '-') {
        if (auto* sub = app.get_subcommand_no_throw(args[0])) {
          if (const auto cfg = find_config(args)) {
            auto extra = config_args(*cfg, *sub, path_keys.at(args[0]));
            args.insert(args.begin() + 1, extra.begin(), extra.end());
          }
        }
      }
      std::vector<const char*> ptrs{argv[0]};
      for (const auto& a : args) ptrs.push_back(a.c_str());
      app.parse(static_cast<int>(ptrs.size()), ptrs.data());
    } catch (const CLI::CallForHelp&) {
      out << app.help();
      return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
      out << app.help("", CLI::AppFormatMode::All);
      return kExitOk;
    } catch (const CLI::ParseError& ex) {
      err << "romforge: " << ex.what() << "\n" << app.help();
      return kExitConfig;
    }

    nlohmann::json line;
    if (*g) {
      gen.out = absolute(gen.out);
      line = cmd_gen(gen);
    } else if (*t) {
      tr.data = absolute(tr.data);
      tr.out = absolute(tr.out);
      line = cmd_train(tr);
    } else if (*p) {
      pr.model_dir = absolute(pr.model_dir);
      pr.out = absolute(pr.out);
      line = cmd_predict(pr);
    } else if (*e) {
      ev.model_dir = absolute(ev.model_dir);
      ev.data = absolute(ev.data);
      ev.plots = absolute(ev.plots);
      ev.report = absolute(ev.report);
      line = cmd_eval(ev);
    } else {
      be.model_dir = absolute(be.model_dir);
      line = cmd_bench(be);
    }
    out << line.dump() << "\n";
    return kExitOk;
  } catch (const InputError& ex) {
    err << "romforge: configuration error: " << ex.what() << "\n";
    return kExitConfig;
  } catch (const IoError& ex) {
    err << "romforge: I/O error: " << ex.what() << "\n";
    return kExitIo;
  } catch (const NumericalError& ex) {
    err << "romforge: numerical error: " << ex.what() << "\n";
    return kExitNumerical;
  } catch (const nlohmann::json::exception& ex) {
    err << "romforge: configuration error: " << ex.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& ex) {
    err << "romforge: error: " << ex.what() << "\n";
    return 1;
  }
}

}  // namespace romforge::cli
