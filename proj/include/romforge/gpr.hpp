#pragma once

// Exact 1-D Gaussian process regression: constant mean, RBF kernel,
// hyperparameters fitted by maximizing the log marginal likelihood.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <tuple>
#include <vector>

#include "romforge/error.hpp"

namespace romforge {

struct RbfKernel {
  double signal_variance = 1.0;
  double length_scale = 1.0;
};

inline double rbf_kernel(const RbfKernel& k, double mu, double mu_prime) {
  const double d = mu - mu_prime;
  return k.signal_variance * std::exp(-(d * d) / (2.0 * k.length_scale * k.length_scale));
}

struct GprConfig {
  std::optional<double> jitter;  // unset: 1e-8 * target variance
  int restarts = 8;
  std::uint64_t seed = 0;
  int max_iterations = 300;
};

struct GprPrediction {
  double mean = 0.0;
  double variance = 0.0;
};

/// A conditioned GP. Immutable once built; prediction is const and lock-free.
struct GprModel {
  std::vector<double> train_inputs;
  std::vector<double> train_targets;
  double mean_constant = 0.0;
  RbfKernel kernel;
  double noise_jitter = 0.0;
  Eigen::MatrixXd chol_factor;  // lower triangular, L L^T = K + jitter I
  Eigen::VectorXd alpha;        // (K + jitter I)^{-1} (y - mean)

  std::size_t size() const { return train_inputs.size(); }
};

namespace gpr_detail {

inline Eigen::MatrixXd gram(const std::vector<double>& x, const RbfKernel& k) {
  const auto n = static_cast<Eigen::Index>(x.size());
  Eigen::MatrixXd out(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j <= i; ++j)
      out(i, j) = out(j, i) = rbf_kernel(k, x[static_cast<std::size_t>(i)], x[static_cast<std::size_t>(j)]);
  return out;
}

inline Eigen::VectorXd centered_targets(const std::vector<double>& y, double mean) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(y.size()));
  for (std::size_t i = 0; i < y.size(); ++i) out(static_cast<Eigen::Index>(i)) = y[i] - mean;
  return out;
}

struct LmlEval {
  double value = -std::numeric_limits<double>::infinity();
  std::array<double, 2> grad{};  // d/d log(sv), d/d log(ell)
  bool ok = false;
};

/// Log marginal likelihood and its gradient in (log sv, log ell).
/// Uses dL/dtheta = 1/2 tr((a a^T - A^{-1}) dK/dtheta).
inline LmlEval lml_with_gradient(const std::vector<double>& x, const Eigen::VectorXd& y, const RbfKernel& k,
                                 double jitter) {
  LmlEval out;
  const auto n = static_cast<Eigen::Index>(x.size());
  const Eigen::MatrixXd kmat = gram(x, k);
  Eigen::MatrixXd a = kmat;
  a.diagonal().array() += jitter;
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) return out;
  const Eigen::MatrixXd& l = llt.matrixLLT();
  if (!(l.diagonal().array() > 0.0).all()) return out;
  const Eigen::VectorXd alpha = llt.solve(y);
  const double log_det = 2.0 * l.diagonal().array().log().sum();
  out.value = -0.5 * y.dot(alpha) - 0.5 * log_det - 0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
  if (!std::isfinite(out.value)) return out;

  const Eigen::MatrixXd inner = alpha * alpha.transpose() - llt.solve(Eigen::MatrixXd::Identity(n, n));
  const double ell2 = k.length_scale * k.length_scale;
  double g_sv = 0.0;
  double g_ell = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      const double d = x[static_cast<std::size_t>(i)] - x[static_cast<std::size_t>(j)];
      g_sv += inner(i, j) * kmat(i, j);
      g_ell += inner(i, j) * kmat(i, j) * (d * d / ell2);
    }
  out.grad = {0.5 * g_sv, 0.5 * g_ell};
  out.ok = std::isfinite(out.grad[0]) && std::isfinite(out.grad[1]);
  return out;
}

// Box in log-parameter space, relative to the data's natural scales.
struct LogBox {
  double lo_sv, hi_sv, lo_ell, hi_ell;
  bool contains(const std::array<double, 2>& t) const {
    return t[0] >= lo_sv && t[0] <= hi_sv && t[1] >= lo_ell && t[1] <= hi_ell;
  }
};

// Uniform double in [0,1) from the top 53 bits, identical on every platform.
inline double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// BFGS ascent with Armijo backtracking, confined to `box`.
inline std::pair<std::array<double, 2>, LmlEval> bfgs_ascent(const std::vector<double>& x, const Eigen::VectorXd& y,
                                                            double jitter, std::array<double, 2> t,
                                                            const LogBox& box, int max_iterations) {
  auto eval = [&](const std::array<double, 2>& p) {
    return lml_with_gradient(x, y, RbfKernel{std::exp(p[0]), std::exp(p[1])}, jitter);
  };
  LmlEval cur = eval(t);
  if (!cur.ok) return {t, cur};
  Eigen::Matrix2d h = Eigen::Matrix2d::Identity();  // inverse Hessian approximation of -LML
  for (int it = 0; it < max_iterations; ++it) {
    const Eigen::Vector2d g(cur.grad[0], cur.grad[1]);
    if (g.lpNorm<Eigen::Infinity>() < 1e-7) break;
    Eigen::Vector2d dir = h * g;
    if (dir.dot(g) <= 0.0) {
      h.setIdentity();
      dir = g;
    }
    const double dir_norm = dir.norm();
    if (dir_norm > 2.0) dir *= 2.0 / dir_norm;

    double step = 1.0;
    LmlEval next;
    std::array<double, 2> cand{};
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls, step *= 0.5) {
      cand = {t[0] + step * dir(0), t[1] + step * dir(1)};
      if (!box.contains(cand)) continue;
      next = eval(cand);
      if (next.ok && next.value >= cur.value + 1e-4 * step * g.dot(dir)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    const Eigen::Vector2d s(cand[0] - t[0], cand[1] - t[1]);
    const bool stalled = s.lpNorm<Eigen::Infinity>() < 1e-10 || next.value <= cur.value;
    const Eigen::Vector2d gy = -(Eigen::Vector2d(next.grad[0], next.grad[1]) - g);
    const double sy = s.dot(gy);
    if (sy > 1e-14) {
      const double rho = 1.0 / sy;
      const Eigen::Matrix2d i2 = Eigen::Matrix2d::Identity();
      h = (i2 - rho * s * gy.transpose()) * h * (i2 - rho * gy * s.transpose()) + rho * s * s.transpose();
    }
    t = cand;
    cur = next;
    if (stalled) break;
  }
  return {t, cur};
}

/// Newton iterations on the analytic gradient (Hessian by central
/// differences). Drives the gradient below the resolution of line searches
/// on the LML value itself. Steps are kept only if they shrink the gradient.
inline std::pair<std::array<double, 2>, LmlEval> newton_polish(const std::vector<double>& x, const Eigen::VectorXd& y,
                                                              double jitter, std::array<double, 2> t, LmlEval cur,
                                                              const LogBox& box) {
  auto eval = [&](const std::array<double, 2>& p) {
    return lml_with_gradient(x, y, RbfKernel{std::exp(p[0]), std::exp(p[1])}, jitter);
  };
  auto gnorm = [](const LmlEval& e) { return std::max(std::abs(e.grad[0]), std::abs(e.grad[1])); };
  constexpr double kStep = 1e-5;
  for (int it = 0; it < 20 && gnorm(cur) > 1e-12; ++it) {
    Eigen::Matrix2d hess;
    for (int c = 0; c < 2; ++c) {
      auto up = t, down = t;
      up[static_cast<std::size_t>(c)] += kStep;
      down[static_cast<std::size_t>(c)] -= kStep;
      const auto eu = eval(up);
      const auto ed = eval(down);
      if (!eu.ok || !ed.ok) return {t, cur};
      hess(0, c) = (eu.grad[0] - ed.grad[0]) / (2.0 * kStep);
      hess(1, c) = (eu.grad[1] - ed.grad[1]) / (2.0 * kStep);
    }
    hess = 0.5 * (hess + hess.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(hess);
    if (es.eigenvalues().maxCoeff() >= 0.0) break;  // not at a maximum
    const Eigen::Vector2d delta = -hess.ldlt().solve(Eigen::Vector2d(cur.grad[0], cur.grad[1]));
    const std::array<double, 2> cand{t[0] + delta(0), t[1] + delta(1)};
    if (!box.contains(cand)) break;
    const auto next = eval(cand);
    if (!next.ok || gnorm(next) >= gnorm(cur) || next.value < cur.value - 1e-9 * (1.0 + std::abs(cur.value))) break;
    t = cand;
    cur = next;
  }
  return {t, cur};
}

}  // namespace gpr_detail

/// Builds the cached Cholesky factor and weights for fixed hyperparameters.
/// If the factorization fails, jitter is escalated x10 up to 1e-6 * sv.
inline GprModel condition_gpr(std::vector<double> inputs, std::vector<double> targets, RbfKernel kernel,
                              double jitter, double mean_constant) {
  if (inputs.size() != targets.size()) throw ShapeError("gpr: inputs and targets differ in length");
  if (inputs.empty()) throw EmptyInputError("gpr: no training points");
  if (!(kernel.signal_variance > 0.0) || !(kernel.length_scale > 0.0) || !std::isfinite(kernel.signal_variance) ||
      !std::isfinite(kernel.length_scale))
    throw ConfigError("gpr: kernel parameters must be positive and finite");
  if (!(jitter >= 0.0)) throw ConfigError("gpr: jitter must be >= 0");

  GprModel model;
  model.train_inputs = std::move(inputs);
  model.train_targets = std::move(targets);
  model.mean_constant = mean_constant;
  model.kernel = kernel;

  const Eigen::MatrixXd kmat = gpr_detail::gram(model.train_inputs, kernel);
  const double ceiling = 1e-6 * kernel.signal_variance;
  double j = jitter;
  for (;;) {
    Eigen::MatrixXd a = kmat;
    a.diagonal().array() += j;
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() == Eigen::Success && (llt.matrixLLT().diagonal().array() > 0.0).all()) {
      model.noise_jitter = j;
      model.chol_factor = llt.matrixL();
      model.alpha = llt.solve(gpr_detail::centered_targets(model.train_targets, mean_constant));
      return model;
    }
    const double next = j > 0.0 ? 10.0 * j : 1e-12 * kernel.signal_variance;
    if (next > ceiling * (1.0 + 1e-12))
      throw ConditioningError("gpr: Cholesky failed with jitter up to " + std::to_string(j));
    j = next;
  }
}

/// Fits mean, signal variance and length scale to (inputs, targets).
inline GprModel fit_gpr(const std::vector<double>& inputs, const std::vector<double>& targets,
                        const GprConfig& config = {}) {
  if (inputs.size() != targets.size()) throw ShapeError("fit_gpr: inputs and targets differ in length");
  if (inputs.empty()) throw EmptyInputError("fit_gpr: no training points");
  if (config.restarts < 1) throw ConfigError("fit_gpr: restarts must be >= 1");
  for (std::size_t i = 0; i < inputs.size(); ++i)
    if (!std::isfinite(inputs[i]) || !std::isfinite(targets[i])) throw DataError("fit_gpr: non-finite training data");

  const auto n = static_cast<double>(inputs.size());
  double mean = 0.0;
  for (double y : targets) mean += y;
  mean /= n;
  double variance = 0.0;
  for (double y : targets) variance += (y - mean) * (y - mean);
  variance /= n;

  const double jitter = config.jitter.value_or(1e-8 * variance);
  if (!(jitter >= 0.0)) throw ConfigError("fit_gpr: jitter must be >= 0");
  {
    auto sorted = inputs;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end() && jitter == 0.0)
      throw SingularMatrixError("fit_gpr: duplicate inputs make K singular without jitter");
  }

  const auto [lo, hi] = std::minmax_element(inputs.begin(), inputs.end());
  const double range = *hi > *lo ? *hi - *lo : 1.0;
  const double scale = variance > 0.0 ? variance : 1.0;

  const gpr_detail::LogBox box{std::log(1e-4 * scale), std::log(1e4 * scale), std::log(1e-2 * range),
                               std::log(1e1 * range)};
  const Eigen::VectorXd y = gpr_detail::centered_targets(targets, mean);

  std::mt19937_64 rng(config.seed);
  std::array<double, 2> best_theta{std::log(scale), std::log(0.5 * range)};
  double best_value = -std::numeric_limits<double>::infinity();
  for (int s = 0; s < config.restarts; ++s) {
    const double u_sv = gpr_detail::unit_uniform(rng);
    const double u_ell = gpr_detail::unit_uniform(rng);
    const std::array<double, 2> start{std::log(0.1 * scale) + u_sv * std::log(100.0),
                                      std::log(0.05 * range) + u_ell * std::log(40.0)};
    auto [theta, eval] = gpr_detail::bfgs_ascent(inputs, y, jitter, start, box, config.max_iterations);
    if (!eval.ok) continue;
    std::tie(theta, eval) = gpr_detail::newton_polish(inputs, y, jitter, theta, eval, box);
    if (eval.value > best_value) {
      best_value = eval.value;
      best_theta = theta;
    }
  }
  if (!std::isfinite(best_value))
    throw ConditioningError("fit_gpr: no start produced a factorizable kernel matrix");

  return condition_gpr(inputs, targets, RbfKernel{std::exp(best_theta[0]), std::exp(best_theta[1])}, jitter, mean);
}

inline GprPrediction predict_gpr(const GprModel& model, double mu_star) {
  const auto n = static_cast<Eigen::Index>(model.size());
  Eigen::VectorXd k_star(n);
  for (Eigen::Index i = 0; i < n; ++i)
    k_star(i) = rbf_kernel(model.kernel, mu_star, model.train_inputs[static_cast<std::size_t>(i)]);
  GprPrediction out;
  out.mean = model.mean_constant + k_star.dot(model.alpha);
  const Eigen::VectorXd v = model.chol_factor.triangularView<Eigen::Lower>().solve(k_star);
  out.variance = std::max(0.0, model.kernel.signal_variance - v.squaredNorm());
  return out;
}

inline double log_marginal_likelihood(const GprModel& model) {
  const auto n = static_cast<double>(model.size());
  const Eigen::VectorXd y = gpr_detail::centered_targets(model.train_targets, model.mean_constant);
  return -0.5 * y.dot(model.alpha) - model.chol_factor.diagonal().array().log().sum() -
         0.5 * n * std::log(2.0 * std::numbers::pi);
}

}  // namespace romforge
