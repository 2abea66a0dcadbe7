#pragma once

// POD-GPR surrogate: a POD basis over all training snapshots and one GP per
// retained mode, mapping dwell time to final-step POD coefficients.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "romforge/binary_io.hpp"
#include "romforge/data_model.hpp"
#include "romforge/gpr.hpp"
#include "romforge/pod.hpp"
#include "romforge/snapshot_io.hpp"

namespace romforge {

/// Affine map of dwell time onto [0, 1] over the training range.
struct InputNorm {
  double offset = 0.0;
  double scale = 1.0;

  double operator()(double dt) const { return (dt - offset) / scale; }
};

struct PodGprRom {
  PodBasis basis;
  std::vector<GprModel> gprs;  // one per retained mode
  InputNorm input_norm;
  std::vector<ParameterPoint> training_params;

  Eigen::Index rank() const { return basis.rank; }
};

struct RomConfig {
  double energy_threshold = 0.9999;
  std::optional<double> jitter;  // per mode; unset uses the GPR default
  int restarts = 8;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  bool center = true;
};

struct FieldPrediction {
  Eigen::VectorXd mean_field;
  Eigen::VectorXd lower_95;
  Eigen::VectorXd upper_95;
  Eigen::VectorXd coeff_means;
  Eigen::VectorXd coeff_variances;
  bool extrapolation = false;
};

inline constexpr double kZ95 = 1.96;

/// Runs `work(i)` for i in [0, count) on up to `threads` workers. The first
/// exception by index order is rethrown after all workers join.
template <class Work>
void parallel_for(std::size_t count, unsigned threads, Work&& work) {
  std::vector<std::exception_ptr> errors(count);
  const unsigned n_workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(count)));
  auto run = [&](unsigned worker) {
    for (std::size_t i = worker; i < count; i += n_workers) {
      try {
        work(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (n_workers == 1) {
    run(0);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < n_workers; ++w) pool.emplace_back(run, w);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline PodGprRom train_pod_gpr(const SnapshotTensor& train, const RomConfig& config = {}) {
  if (train.size() < 2) throw ConfigError("train_pod_gpr: need at least 2 training parameters");
  const Eigen::Index n_h = train.n_nodes();
  const Eigen::Index n_t = train.n_steps();
  const auto n_mu = static_cast<Eigen::Index>(train.size());

  Eigen::MatrixXd all(n_h, n_mu * n_t);
  for (Eigen::Index i = 0; i < n_mu; ++i) all.middleCols(i * n_t, n_t) = train[static_cast<std::size_t>(i)].values;

  PodGprRom rom;
  rom.basis = compute_pod(all, config.energy_threshold, PodOptions{.center = config.center});
  const Eigen::Index r = rom.basis.rank;

  const auto dts = train.dwell_times();
  const auto [lo, hi] = std::minmax_element(dts.begin(), dts.end());
  rom.input_norm = InputNorm{*lo, *hi - *lo};
  for (double dt : dts) rom.training_params.push_back(ParameterPoint{dt});

  std::vector<double> inputs;
  for (double dt : dts) inputs.push_back(rom.input_norm(dt));
  Eigen::MatrixXd coeffs(r, n_mu);
  for (Eigen::Index i = 0; i < n_mu; ++i) coeffs.col(i) = project(rom.basis, train[static_cast<std::size_t>(i)].final_field());

  rom.gprs.resize(static_cast<std::size_t>(r));
  parallel_for(static_cast<std::size_t>(r), config.threads, [&](std::size_t j) {
    std::vector<double> targets(coeffs.row(static_cast<Eigen::Index>(j)).begin(), coeffs.row(static_cast<Eigen::Index>(j)).end());
    GprConfig gc{config.jitter, config.restarts, config.seed + j};
    try {
      rom.gprs[j] = fit_gpr(inputs, targets, gc);
    } catch (const ConditioningError& e) {
      throw ConditioningError("mode " + std::to_string(j) + ": " + e.what());
    } catch (const SingularMatrixError& e) {
      throw SingularMatrixError("mode " + std::to_string(j) + ": " + e.what());
    }
  });
  return rom;
}

inline bool is_extrapolation(const PodGprRom& rom, double dt) {
  return dt < rom.input_norm.offset || dt > rom.input_norm.offset + rom.input_norm.scale;
}

inline FieldPrediction predict_distortion(const PodGprRom& rom, double dt) {
  if (!std::isfinite(dt)) throw ConfigError("predict_distortion: dwell time must be finite");
  const Eigen::Index r = rom.rank();
  const double t = rom.input_norm(dt);
  FieldPrediction out;
  out.coeff_means.resize(r);
  out.coeff_variances.resize(r);
  for (Eigen::Index j = 0; j < r; ++j) {
    const auto p = predict_gpr(rom.gprs[static_cast<std::size_t>(j)], t);
    out.coeff_means(j) = p.mean;
    out.coeff_variances(j) = p.variance;
  }
  out.mean_field = reconstruct(rom.basis, out.coeff_means);
  const Eigen::VectorXd node_sd = (rom.basis.modes.array().square().matrix() * out.coeff_variances).array().sqrt();
  out.lower_95 = out.mean_field - kZ95 * node_sd;
  out.upper_95 = out.mean_field + kZ95 * node_sd;
  out.extrapolation = is_extrapolation(rom, dt);
  return out;
}

// Archive directory: basis.bin, gprs.json, norm.json, manifest.json.
// Every double in the JSON files is hex-encoded little-endian.
inline constexpr int kRomArchiveVersion = 1;

namespace rom_detail {

inline nlohmann::json hex_array(const std::vector<double>& v) {
  nlohmann::json out = nlohmann::json::array();
  for (double x : v) out.push_back(io::hex_f64(x));
  return out;
}

inline std::vector<double> unhex_array(const nlohmann::json& j) {
  std::vector<double> out;
  for (const auto& s : j) out.push_back(io::unhex_f64(s.get<std::string>()));
  return out;
}

}  // namespace rom_detail

inline void save_rom(const PodGprRom& rom, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw WriteError("cannot create directory '" + dir.string() + "': " + ec.message());
  save_basis(rom.basis, dir / "basis.bin");

  nlohmann::json modes = nlohmann::json::array();
  for (std::size_t j = 0; j < rom.gprs.size(); ++j) {
    const auto& g = rom.gprs[j];
    modes.push_back({{"mode", j},
                     {"signal_variance", io::hex_f64(g.kernel.signal_variance)},
                     {"length_scale", io::hex_f64(g.kernel.length_scale)},
                     {"jitter", io::hex_f64(g.noise_jitter)},
                     {"mean_constant", io::hex_f64(g.mean_constant)},
                     {"train_inputs", rom_detail::hex_array(g.train_inputs)},
                     {"train_targets", rom_detail::hex_array(g.train_targets)}});
  }
  write_json_file({{"version", kRomArchiveVersion}, {"modes", modes}}, dir / "gprs.json", 1);
  write_json_file({{"version", kRomArchiveVersion},
                   {"offset", io::hex_f64(rom.input_norm.offset)},
                   {"scale", io::hex_f64(rom.input_norm.scale)}},
                  dir / "norm.json", 1);
  std::vector<double> dts;
  for (const auto& p : rom.training_params) dts.push_back(p.dwell_time);
  write_json_file({{"model", "pod-gpr"},
                   {"version", kRomArchiveVersion},
                   {"r", rom.rank()},
                   {"N_h", rom.basis.n_nodes()},
                   {"training_dwell_times", dts}},
                  dir / "manifest.json", 1);
}

inline PodGprRom load_rom(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw FormatError("ROM archive '" + dir.string() + "' does not exist");
  for (const char* name : {"manifest.json", "basis.bin", "gprs.json", "norm.json"})
    if (!std::filesystem::exists(dir / name))
      throw FormatError("ROM archive '" + dir.string() + "' is missing " + name);

  const auto manifest = read_json_file(dir / "manifest.json");
  const auto gprs = read_json_file(dir / "gprs.json");
  const auto norm = read_json_file(dir / "norm.json");
  PodGprRom rom;
  try {
    for (const auto* j : {&manifest, &gprs, &norm})
      if (j->at("version").get<int>() != kRomArchiveVersion)
        throw FormatError("ROM archive version " + j->at("version").dump() + " is not supported");
    rom.basis = load_basis(dir / "basis.bin");
    if (manifest.at("r").get<Eigen::Index>() != rom.basis.rank ||
        manifest.at("N_h").get<Eigen::Index>() != rom.basis.n_nodes())
      throw CorruptionError("manifest.json disagrees with basis.bin on r or N_h");
    for (double dt : manifest.at("training_dwell_times").get<std::vector<double>>())
      rom.training_params.push_back(ParameterPoint{dt});
    rom.input_norm = InputNorm{io::unhex_f64(norm.at("offset").get<std::string>()),
                               io::unhex_f64(norm.at("scale").get<std::string>())};

    const auto& modes = gprs.at("modes");
    std::vector<const nlohmann::json*> by_index(static_cast<std::size_t>(rom.basis.rank), nullptr);
    for (const auto& m : modes) {
      const auto j = m.at("mode").get<std::size_t>();
      if (j >= by_index.size()) throw FormatError("gprs.json has an entry for mode " + std::to_string(j) + " beyond rank");
      by_index[j] = &m;
    }
    for (std::size_t j = 0; j < by_index.size(); ++j) {
      if (!by_index[j]) throw FormatError("gprs.json is missing the GPR for mode " + std::to_string(j));
      const auto& m = *by_index[j];
      rom.gprs.push_back(condition_gpr(rom_detail::unhex_array(m.at("train_inputs")),
                                       rom_detail::unhex_array(m.at("train_targets")),
                                       RbfKernel{io::unhex_f64(m.at("signal_variance").get<std::string>()),
                                                 io::unhex_f64(m.at("length_scale").get<std::string>())},
                                       io::unhex_f64(m.at("jitter").get<std::string>()),
                                       io::unhex_f64(m.at("mean_constant").get<std::string>())));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("ROM archive '" + dir.string() + "' is malformed: " + e.what());
  }
  return rom;
}

}  // namespace romforge
