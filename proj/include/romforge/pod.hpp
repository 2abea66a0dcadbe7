#pragma once

// Proper orthogonal decomposition by the method of snapshots.

#include <Eigen/Dense>

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <span>
#include <vector>

#include "romforge/binary_io.hpp"
#include "romforge/error.hpp"

namespace romforge {

/// Truncated POD basis. `modes` holds the first `rank` left singular vectors
/// of the centered snapshot matrix; `singular_values` keeps all m of them.
struct PodBasis {
  Eigen::MatrixXd modes;            // N_h x r, orthonormal columns
  Eigen::VectorXd singular_values;  // length m, descending
  Eigen::VectorXd reference;        // length N_h
  Eigen::Index rank = 0;
  double energy_captured = 0.0;

  Eigen::Index n_nodes() const { return reference.size(); }
};

struct PodOptions {
  bool center = true;  // subtract the column mean; false uses a zero reference
  double relative_cutoff = 1e-12;
};

/// Fraction of total energy in the first r singular values.
inline double energy_fraction(std::span<const double> singular_values, std::size_t r) {
  if (r < 1 || r > singular_values.size())
    throw IndexError("energy_fraction: r=" + std::to_string(r) + " outside [1, " +
                     std::to_string(singular_values.size()) + "]");
  double head = 0.0;
  double total = 0.0;
  for (std::size_t j = 0; j < singular_values.size(); ++j) {
    const double e = singular_values[j] * singular_values[j];
    total += e;
    if (j < r) head += e;
  }
  if (r == singular_values.size()) return 1.0;
  if (total == 0.0) throw DegenerateError("energy_fraction: all singular values are zero");
  return head / total;
}

inline double energy_fraction(const Eigen::VectorXd& singular_values, Eigen::Index r) {
  return energy_fraction(std::span<const double>(singular_values.data(), static_cast<std::size_t>(singular_values.size())),
                         static_cast<std::size_t>(r));
}

namespace detail {

// Two passes of modified Gram-Schmidt; restores orthonormality lost to the
// squared conditioning of the Gram matrix; leading subspaces are unchanged.
inline void reorthonormalize(Eigen::MatrixXd& q) {
  for (int pass = 0; pass < 2; ++pass)
    for (Eigen::Index j = 0; j < q.cols(); ++j) {
      for (Eigen::Index i = 0; i < j; ++i) q.col(j) -= q.col(i).dot(q.col(j)) * q.col(i);
      q.col(j).normalize();
    }
}

inline void fix_signs(Eigen::MatrixXd& modes) {
  for (Eigen::Index j = 0; j < modes.cols(); ++j) {
    Eigen::Index at = 0;
    modes.col(j).cwiseAbs().maxCoeff(&at);
    if (modes(at, j) < 0.0) modes.col(j) *= -1.0;
  }
}

}  // namespace detail

/// POD of the N_h x m snapshot matrix, truncated to the smallest rank whose
/// energy fraction reaches `energy_threshold`.
///
/// The eigenproblem is solved on the m x m Gram matrix. Singular values are
/// then recomputed as ||U v_j|| rather than sqrt(lambda_j), which keeps small
/// values accurate to working precision instead of sqrt(eps).
inline PodBasis compute_pod(const Eigen::MatrixXd& snapshots, double energy_threshold,
                            const PodOptions& options = {}) {
  const Eigen::Index m = snapshots.cols();
  if (m == 0 || snapshots.rows() == 0) throw EmptyInputError("compute_pod: no snapshots");
  if (!(energy_threshold > 0.0 && energy_threshold <= 1.0))
    throw ConfigError("compute_pod: energy threshold must lie in (0, 1]");
  if (!snapshots.allFinite()) throw DataError("compute_pod: snapshots contain NaN or Inf");

  PodBasis basis;
  basis.reference = options.center ? Eigen::VectorXd(snapshots.rowwise().mean())
                                   : Eigen::VectorXd::Zero(snapshots.rows());
  const Eigen::MatrixXd centered = snapshots.colwise() - basis.reference;
  if (centered.squaredNorm() == 0.0) throw DegenerateError("compute_pod: centered snapshots are all zero");

  Eigen::MatrixXd gram(m, m);
  gram.setZero();
  gram.selfadjointView<Eigen::Lower>().rankUpdate(centered.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram.selfadjointView<Eigen::Lower>());
  if (eig.info() != Eigen::Success) throw DegenerateError("compute_pod: Gram eigensolver failed");

  const Eigen::MatrixXd projected = centered * eig.eigenvectors();  // columns U v_j
  std::vector<double> sigma(static_cast<std::size_t>(m));
  for (Eigen::Index j = 0; j < m; ++j) sigma[static_cast<std::size_t>(j)] = projected.col(j).norm();

  std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return sigma[static_cast<std::size_t>(a)] > sigma[static_cast<std::size_t>(b)];
  });

  basis.singular_values.resize(m);
  for (Eigen::Index j = 0; j < m; ++j) basis.singular_values(j) = sigma[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])];
  const double sigma_max = basis.singular_values(0);
  if (!(sigma_max > 0.0)) throw DegenerateError("compute_pod: no energetic modes");

  Eigen::Index usable = 0;
  while (usable < m && basis.singular_values(usable) > options.relative_cutoff * sigma_max) ++usable;

  Eigen::Index r = 1;
  while (r < usable && energy_fraction(basis.singular_values, r) < energy_threshold) ++r;
  basis.rank = r;
  basis.energy_captured = energy_fraction(basis.singular_values, r);

  basis.modes.resize(snapshots.rows(), r);
  for (Eigen::Index j = 0; j < r; ++j)
    basis.modes.col(j) = projected.col(order[static_cast<std::size_t>(j)]) / basis.singular_values(j);
  detail::reorthonormalize(basis.modes);
  detail::fix_signs(basis.modes);
  return basis;
}

/// Coefficients <field - reference, phi_k>.
inline Eigen::VectorXd project(const PodBasis& basis, const Eigen::Ref<const Eigen::VectorXd>& field) {
  if (field.size() != basis.n_nodes())
    throw ShapeError("project: field has " + std::to_string(field.size()) + " entries, basis expects " +
                     std::to_string(basis.n_nodes()));
  return basis.modes.transpose() * (field - basis.reference);
}

inline Eigen::VectorXd reconstruct(const PodBasis& basis, const Eigen::Ref<const Eigen::VectorXd>& coeffs) {
  if (coeffs.size() != basis.rank)
    throw ShapeError("reconstruct: " + std::to_string(coeffs.size()) + " coefficients for rank " +
                     std::to_string(basis.rank));
  return basis.reference + basis.modes * coeffs;
}

// PODB layout (little-endian): "PODB" | u8 version=1 | u32 N_h | u32 r | u32 m
//   | reference (N_h f64) | modes (N_h*r f64, column-major) | singular values (m f64)
inline constexpr std::uint8_t kBasisVersion = 1;

inline void save_basis(const PodBasis& basis, const std::filesystem::path& file) {
  io::ByteWriter w;
  w.magic("PODB");
  w.u8(kBasisVersion);
  w.u32(static_cast<std::uint32_t>(basis.n_nodes()));
  w.u32(static_cast<std::uint32_t>(basis.rank));
  w.u32(static_cast<std::uint32_t>(basis.singular_values.size()));
  w.f64s({basis.reference.data(), static_cast<std::size_t>(basis.reference.size())});
  w.f64s({basis.modes.data(), static_cast<std::size_t>(basis.modes.size())});
  w.f64s({basis.singular_values.data(), static_cast<std::size_t>(basis.singular_values.size())});
  w.write_file(file);
}

inline PodBasis load_basis(const std::filesystem::path& file) {
  auto r = io::ByteReader::from_file(file);
  if (!r.magic("PODB")) throw FormatError("'" + file.string() + "' is not a PODB file (bad magic)");
  if (auto v = r.u8(); v != kBasisVersion)
    throw FormatError("'" + file.string() + "' has unsupported PODB version " + std::to_string(v));
  const Eigen::Index n_h = r.u32();
  const Eigen::Index rank = r.u32();
  const Eigen::Index m = r.u32();
  if (rank < 1 || rank > m) throw CorruptionError("'" + file.string() + "' declares rank outside [1, m]");
  const auto expected = static_cast<std::size_t>(n_h + n_h * rank + m) * 8;
  if (r.remaining() != expected)
    throw CorruptionError("'" + file.string() + "' holds " + std::to_string(r.remaining()) +
                          " payload bytes, header implies " + std::to_string(expected));
  PodBasis basis;
  basis.rank = rank;
  basis.reference.resize(n_h);
  basis.modes.resize(n_h, rank);
  basis.singular_values.resize(m);
  r.f64s({basis.reference.data(), static_cast<std::size_t>(n_h)});
  r.f64s({basis.modes.data(), static_cast<std::size_t>(n_h * rank)});
  r.f64s({basis.singular_values.data(), static_cast<std::size_t>(m)});
  if (!basis.reference.allFinite() || !basis.modes.allFinite() || !basis.singular_values.allFinite())
    throw DataError("'" + file.string() + "' contains NaN or Inf");
  basis.energy_captured = energy_fraction(basis.singular_values, rank);
  return basis;
}

}  // namespace romforge
