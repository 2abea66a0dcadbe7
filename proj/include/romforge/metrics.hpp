#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "json.hpp"
#include "romforge/data_model.hpp"
#include "romforge/error.hpp"
#include "romforge/rom.hpp"

namespace romforge {

inline double relative_l2(const Eigen::Ref<const Eigen::VectorXd>& pred, const Eigen::Ref<const Eigen::VectorXd>& truth) {
  if (pred.size() != truth.size()) throw ShapeError("relative_l2: length mismatch");
  const double denom = truth.norm();
  if (!(denom > 0.0)) throw DegenerateError("relative_l2: reference field has zero norm");
  return (pred - truth).norm() / denom;
}

struct MaxDisplacement {
  double delta = 0.0;
  double max_true = 0.0;
  double max_pred = 0.0;
};

/// Compares the largest nodal value of each field, not nodewise.
inline MaxDisplacement max_displacement_error(const Eigen::Ref<const Eigen::VectorXd>& pred,
                                              const Eigen::Ref<const Eigen::VectorXd>& truth) {
  if (pred.size() != truth.size()) throw ShapeError("max_displacement_error: length mismatch");
  if (pred.size() == 0) throw EmptyInputError("max_displacement_error: empty fields");
  MaxDisplacement out;
  out.max_true = truth.maxCoeff();
  out.max_pred = pred.maxCoeff();
  out.delta = std::abs(out.max_pred - out.max_true);
  return out;
}

struct EvalRow {
  double dt = 0.0;
  double max_disp_true = 0.0;
  double max_disp_pred = 0.0;
  double max_abs_node_error = 0.0;
  double relative_l2 = 0.0;
};

struct Timing {
  double train_seconds = 0.0;
  double predict_seconds_mean = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  Timing timing;
};

inline EvalRow evaluate_field(double dt, const Eigen::VectorXd& pred, const Eigen::VectorXd& truth) {
  const auto md = max_displacement_error(pred, truth);
  return {dt, md.max_true, md.max_pred, (pred - truth).cwiseAbs().maxCoeff(), relative_l2(pred, truth)};
}

/// Final-step comparison of `predictor(dt)` against every matrix in `test`.
inline std::vector<EvalRow> evaluate(const SnapshotTensor& test, const std::function<Eigen::VectorXd(double)>& predictor) {
  std::vector<EvalRow> rows;
  for (const auto& m : test.matrices())
    rows.push_back(evaluate_field(m.parameter.dwell_time, predictor(m.parameter.dwell_time), m.final_field()));
  return rows;
}

inline nlohmann::json rows_to_json(const std::vector<EvalRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows)
    out.push_back({{"dt", r.dt},
                   {"max_disp_true", r.max_disp_true},
                   {"max_disp_pred", r.max_disp_pred},
                   {"max_disp_delta", std::abs(r.max_disp_pred - r.max_disp_true)},
                   {"max_abs_node_error", r.max_abs_node_error},
                   {"relative_l2", r.relative_l2}});
  return out;
}

inline std::vector<EvalRow> rows_from_json(const nlohmann::json& j) {
  std::vector<EvalRow> rows;
  for (const auto& r : j)
    rows.push_back({r.at("dt").get<double>(), r.at("max_disp_true").get<double>(), r.at("max_disp_pred").get<double>(),
                    r.at("max_abs_node_error").get<double>(), r.at("relative_l2").get<double>()});
  return rows;
}

struct TimingStats {
  double mean_seconds = 0.0;
  double min_seconds = 0.0;
};

/// Per-prediction wall time. One warm-up pass is discarded; each repeat
/// contributes the average over `dts`.
inline TimingStats time_predictor(const std::function<Eigen::VectorXd(double)>& predictor,
                                  const std::vector<double>& dts, int repeats) {
  if (repeats < 1) throw ConfigError("time_predict: repeats must be >= 1");
  if (dts.empty()) throw ConfigError("time_predict: no dwell times");
  using clock = std::chrono::steady_clock;
  double sink = 0.0;
  for (double dt : dts) sink += predictor(dt)(0);
  std::vector<double> samples;
  for (int k = 0; k < repeats; ++k) {
    const auto t0 = clock::now();
    for (double dt : dts) sink += predictor(dt)(0);
    const std::chrono::duration<double> elapsed = clock::now() - t0;
    samples.push_back(elapsed.count() / static_cast<double>(dts.size()));
  }
  volatile double keep = sink;
  (void)keep;
  TimingStats out;
  out.min_seconds = *std::min_element(samples.begin(), samples.end());
  double sum = 0.0;
  for (double s : samples) sum += s;
  out.mean_seconds = std::max(sum / static_cast<double>(samples.size()), out.min_seconds);
  return out;
}

inline TimingStats time_predict(const PodGprRom& rom, const std::vector<double>& dts, int repeats) {
  return time_predictor([&](double dt) { return predict_distortion(rom, dt).mean_field; }, dts, repeats);
}

}  // namespace romforge
