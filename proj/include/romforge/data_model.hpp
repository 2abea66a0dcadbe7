#pragma once

// Snapshot tensors of nodal distortion and the synthetic cylinder generator.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "romforge/error.hpp"

namespace romforge {

/// Process parameter. Only dwell time (seconds) is modeled.
struct ParameterPoint {
  double dwell_time = 0.0;

  friend bool operator==(const ParameterPoint&, const ParameterPoint&) = default;
};

struct Edge {
  std::uint32_t a = 0;
  std::uint32_t b = 0;

  friend bool operator==(const Edge&, const Edge&) = default;
};

struct MeshGeometry {
  std::vector<std::array<double, 3>> node_coords;  // mm
  std::vector<int> layer_index;                    // deposition layer per node, 0-based
  std::vector<Edge> edges;                         // undirected

  std::size_t n_nodes() const { return node_coords.size(); }

  /// Throws ConfigError when an invariant is broken. `n_steps` bounds the
  /// layer indices; pass 0 to skip that check.
  void validate(std::size_t n_steps) const {
    const auto n = node_coords.size();
    if (layer_index.size() != n)
      throw ConfigError("mesh: layer_index has " + std::to_string(layer_index.size()) +
                        " entries for " + std::to_string(n) + " nodes");
    for (int l : layer_index)
      if (l < 0 || (n_steps > 0 && static_cast<std::size_t>(l) >= n_steps))
        throw ConfigError("mesh: layer index " + std::to_string(l) + " outside [0, " +
                          std::to_string(n_steps) + ")");
    std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
    for (const auto& e : edges) {
      if (e.a >= n || e.b >= n) throw ConfigError("mesh: edge references a node out of range");
      if (e.a == e.b) throw ConfigError("mesh: self-loop edge on node " + std::to_string(e.a));
      if (!seen.insert(std::minmax(e.a, e.b)).second)
        throw ConfigError("mesh: duplicate edge " + std::to_string(e.a) + "-" + std::to_string(e.b));
    }
  }
};

/// Nodal distortion of one parameter: column n is the field after step n.
struct SnapshotMatrix {
  Eigen::MatrixXd values;  // N_h x N_t, mm
  ParameterPoint parameter;

  Eigen::VectorXd final_field() const { return values.col(values.cols() - 1); }
};

/// Parameter-indexed stack of snapshot matrices over a shared mesh.
/// Validated on construction and immutable afterwards.
class SnapshotTensor {
 public:
  SnapshotTensor() = default;

  SnapshotTensor(MeshGeometry mesh, std::vector<SnapshotMatrix> matrices)
      : mesh_(std::move(mesh)), matrices_(std::move(matrices)) {
    std::set<double> params;
    for (const auto& m : matrices_) {
      if (m.values.rows() != matrices_.front().values.rows() ||
          m.values.cols() != matrices_.front().values.cols())
        throw ShapeError("snapshot matrices disagree on N_h x N_t");
      if (!m.values.allFinite()) throw DataError("snapshot matrix contains NaN or Inf");
      if (!(m.parameter.dwell_time > 0.0) || !std::isfinite(m.parameter.dwell_time))
        throw ConfigError("dwell time must be positive and finite");
      if (!params.insert(m.parameter.dwell_time).second)
        throw DuplicateParameterError("duplicate dwell time " + std::to_string(m.parameter.dwell_time));
    }
    if (!matrices_.empty() && static_cast<std::size_t>(n_nodes()) != mesh_.n_nodes())
      throw ShapeError("snapshot rows (" + std::to_string(n_nodes()) + ") != mesh nodes (" +
                       std::to_string(mesh_.n_nodes()) + ")");
    mesh_.validate(static_cast<std::size_t>(n_steps()));
  }

  const MeshGeometry& mesh() const { return mesh_; }
  const std::vector<SnapshotMatrix>& matrices() const { return matrices_; }
  const SnapshotMatrix& operator[](std::size_t i) const { return matrices_.at(i); }

  std::size_t size() const { return matrices_.size(); }
  bool empty() const { return matrices_.empty(); }
  Eigen::Index n_nodes() const {
    return matrices_.empty() ? static_cast<Eigen::Index>(mesh_.n_nodes()) : matrices_.front().values.rows();
  }
  Eigen::Index n_steps() const { return matrices_.empty() ? 0 : matrices_.front().values.cols(); }

  std::vector<double> dwell_times() const {
    std::vector<double> out;
    out.reserve(matrices_.size());
    for (const auto& m : matrices_) out.push_back(m.parameter.dwell_time);
    return out;
  }

  /// Index of the matrix whose dwell time equals `dt` exactly.
  std::size_t find(double dt) const {
    for (std::size_t i = 0; i < matrices_.size(); ++i)
      if (matrices_[i].parameter.dwell_time == dt) return i;
    throw LookupError("dwell time " + std::to_string(dt) + " is not in the dataset");
  }

 private:
  MeshGeometry mesh_;
  std::vector<SnapshotMatrix> matrices_;
};

struct SyntheticConfig {
  int n_radial = 6;
  int n_theta = 16;
  int n_layers = 34;
  std::vector<double> dwell_times;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
};

namespace synthetic {

inline constexpr double kRadius = 5.0;        // mm
inline constexpr double kLayerHeight = 0.5;   // mm

/// Amplitude of the final distortion; decays with longer dwell (more cooling).
inline double amplitude(double dt) { return 0.08 + 0.12 * std::exp(-dt / 30.0); }

/// Layer-buildup factor: zero until the node's layer is deposited.
inline double buildup(int step, int layer) {
  if (layer > step) return 0.0;
  return 1.0 - std::exp(-static_cast<double>(step - layer + 1) / 8.0);
}

/// Noise-free distortion at point (x, y, z) of a cylinder of height `height`.
inline double distortion(const std::array<double, 3>& p, int layer, int step, double dt, double height) {
  const double r = std::hypot(p[0], p[1]);
  const double cos_theta = r > 0.0 ? p[0] / r : 1.0;
  return amplitude(dt) * (p[2] / height) * (r / kRadius) * (1.0 + 0.3 * cos_theta) * buildup(step, layer);
}

/// Cylinder of radius 5 mm, one z-level per layer boundary, structured edges.
inline MeshGeometry cylinder_mesh(int n_radial, int n_theta, int n_layers) {
  MeshGeometry mesh;
  const auto levels = n_layers + 1;
  const auto per_level = n_radial * n_theta;
  mesh.node_coords.reserve(static_cast<std::size_t>(levels * per_level));
  auto id = [&](int k, int i, int j) {
    return static_cast<std::uint32_t>((k * n_radial + i) * n_theta + j);
  };
  for (int k = 0; k < levels; ++k) {
    for (int i = 0; i < n_radial; ++i) {
      const double r = kRadius * (i + 1) / n_radial;
      for (int j = 0; j < n_theta; ++j) {
        const double theta = 2.0 * std::numbers::pi * j / n_theta;
        mesh.node_coords.push_back({r * std::cos(theta), r * std::sin(theta), k * kLayerHeight});
        mesh.layer_index.push_back(k == 0 ? 0 : k - 1);
      }
    }
  }
  for (int k = 0; k < levels; ++k)
    for (int i = 0; i < n_radial; ++i)
      for (int j = 0; j < n_theta; ++j) {
        mesh.edges.push_back({id(k, i, j), id(k, i, (j + 1) % n_theta)});
        if (i + 1 < n_radial) mesh.edges.push_back({id(k, i, j), id(k, i + 1, j)});
        if (k + 1 < levels) mesh.edges.push_back({id(k, i, j), id(k + 1, i, j)});
      }
  return mesh;
}

}  // namespace synthetic

/// Closed-form stand-in for the finite-element distortion dataset.
inline SnapshotTensor generate_synthetic_dataset(const SyntheticConfig& cfg) {
  if (cfg.n_radial < 2 || cfg.n_theta < 4 || cfg.n_layers < 2)
    throw ConfigError("synthetic mesh needs n_radial >= 2, n_theta >= 4, n_layers >= 2");
  if (cfg.dwell_times.empty()) throw ConfigError("at least one dwell time is required");
  if (!(cfg.noise_sigma >= 0.0) || !std::isfinite(cfg.noise_sigma))
    throw ConfigError("noise_sigma must be finite and >= 0");
  {
    std::set<double> distinct(cfg.dwell_times.begin(), cfg.dwell_times.end());
    if (distinct.size() != cfg.dwell_times.size())
      throw DuplicateParameterError("dwell times must be distinct");
  }
  for (double dt : cfg.dwell_times)
    if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("dwell times must be positive and finite");

  auto mesh = synthetic::cylinder_mesh(cfg.n_radial, cfg.n_theta, cfg.n_layers);
  const double height = cfg.n_layers * synthetic::kLayerHeight;
  const auto n_nodes = static_cast<Eigen::Index>(mesh.n_nodes());
  const int n_steps = cfg.n_layers;

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> noise(0.0, cfg.noise_sigma > 0.0 ? cfg.noise_sigma : 1.0);

  std::vector<SnapshotMatrix> matrices;
  matrices.reserve(cfg.dwell_times.size());
  for (double dt : cfg.dwell_times) {
    SnapshotMatrix m{Eigen::MatrixXd(n_nodes, n_steps), ParameterPoint{dt}};
    for (Eigen::Index p = 0; p < n_nodes; ++p) {
      const auto& xyz = mesh.node_coords[static_cast<std::size_t>(p)];
      const int layer = mesh.layer_index[static_cast<std::size_t>(p)];
      for (int n = 0; n < n_steps; ++n) {
        double u = synthetic::distortion(xyz, layer, n, dt, height);
        if (cfg.noise_sigma > 0.0) u += noise(rng);
        m.values(p, n) = u;
      }
    }
    matrices.push_back(std::move(m));
  }
  return SnapshotTensor(std::move(mesh), std::move(matrices));
}

/// Partitions by exact dwell-time match. Both halves share the mesh.
inline std::pair<SnapshotTensor, SnapshotTensor> split_dataset(const SnapshotTensor& tensor,
                                                               const std::vector<double>& train,
                                                               const std::vector<double>& test) {
  for (double a : train)
    for (double b : test)
      if (a == b) throw SplitError("dwell time " + std::to_string(a) + " is in both train and test");
  auto pick = [&](const std::vector<double>& dts) {
    std::vector<SnapshotMatrix> out;
    out.reserve(dts.size());
    for (double dt : dts) out.push_back(tensor[tensor.find(dt)]);
    return SnapshotTensor(tensor.mesh(), std::move(out));
  };
  return {pick(train), pick(test)};
}

}  // namespace romforge
