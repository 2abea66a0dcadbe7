#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "romforge/data_model.hpp"
#include "support.hpp"

using namespace romforge;

namespace {

// Straight-line evaluation of the closed-form distortion, written without
// the library helpers.
double oracle_u(double x, double y, double z, int layer, int step, double dt, int n_layers) {
  const double height = 0.5 * n_layers;
  const double r = std::sqrt(x * x + y * y);
  const double theta = std::atan2(y, x);
  const double a = 0.08 + 0.12 * std::exp(-dt / 30.0);
  const double s = layer > step ? 0.0 : 1.0 - std::exp(-(step - layer + 1) / 8.0);
  return a * (z / height) * (r / 5.0) * (1.0 + 0.3 * std::cos(theta)) * s;
}

std::vector<double> dwell_grid() {
  std::vector<double> dts;
  for (int d = 20; d <= 80; d += 5) dts.push_back(d);
  return dts;
}

SyntheticConfig small_config(std::vector<double> dts, int layers = 6) {
  SyntheticConfig c;
  c.n_radial = 3;
  c.n_theta = 8;
  c.n_layers = layers;
  c.dwell_times = std::move(dts);
  return c;
}

}  // namespace

TEST(Synthetic, LargeDwellLimitAtOuterTopNode) {
  const double height = 34 * 0.5;
  const double u = synthetic::distortion({5.0, 0.0, height}, 0, 33, 1e9, height);
  EXPECT_NEAR(u, 0.08 * 1.3 * (1.0 - std::exp(-34.0 / 8.0)), 1e-12);
}

TEST(Synthetic, NodesOfLaterLayersAreExactlyZero) {
  const auto t = generate_synthetic_dataset(small_config({20, 50}));
  const auto& mesh = t.mesh();
  int checked = 0;
  for (const auto& m : t.matrices())
    for (Eigen::Index p = 0; p < t.n_nodes(); ++p)
      for (Eigen::Index n = 0; n < t.n_steps(); ++n)
        if (mesh.layer_index[static_cast<std::size_t>(p)] > n) {
          EXPECT_EQ(m.values(p, n), 0.0);
          ++checked;
        }
  EXPECT_GT(checked, 0);
}

TEST(Synthetic, FullTensorMatchesIndependentFormula) {
  SyntheticConfig c;
  c.dwell_times = dwell_grid();
  const auto t = generate_synthetic_dataset(c);
  ASSERT_EQ(t.size(), 13u);
  ASSERT_EQ(t.n_steps(), 34);
  ASSERT_EQ(t.n_nodes(), 35 * 6 * 16);
  double worst = 0.0;
  for (const auto& m : t.matrices())
    for (Eigen::Index p = 0; p < t.n_nodes(); ++p) {
      const auto& xyz = t.mesh().node_coords[static_cast<std::size_t>(p)];
      const int layer = t.mesh().layer_index[static_cast<std::size_t>(p)];
      for (int n = 0; n < 34; ++n)
        worst = std::max(worst, std::abs(m.values(p, n) -
                                         oracle_u(xyz[0], xyz[1], xyz[2], layer, n, m.parameter.dwell_time, 34)));
    }
  EXPECT_LE(worst, 1e-12);
}

TEST(Synthetic, NonDecreasingInStep) {
  const auto t = generate_synthetic_dataset(small_config({20, 80}));
  for (const auto& m : t.matrices())
    for (Eigen::Index p = 0; p < t.n_nodes(); ++p)
      for (Eigen::Index n = 1; n < t.n_steps(); ++n) EXPECT_GE(m.values(p, n), m.values(p, n - 1));
}

TEST(Synthetic, StrictlyDecreasingInDwellWhereActive) {
  const auto t = generate_synthetic_dataset(small_config(dwell_grid()));
  int strict = 0;
  for (std::size_t i = 1; i < t.size(); ++i)
    for (Eigen::Index p = 0; p < t.n_nodes(); ++p)
      for (Eigen::Index n = 0; n < t.n_steps(); ++n) {
        const double prev = t[i - 1].values(p, n);
        const double cur = t[i].values(p, n);
        if (prev > 0.0) {
          EXPECT_LT(cur, prev);
          ++strict;
        } else {
          EXPECT_EQ(cur, 0.0);
        }
      }
  EXPECT_GT(strict, 0);
}

TEST(Synthetic, MeshShapeAndInvariants) {
  const int nr = 3, nt = 8, nl = 5;
  const auto mesh = synthetic::cylinder_mesh(nr, nt, nl);
  const int levels = nl + 1;
  EXPECT_EQ(mesh.n_nodes(), static_cast<std::size_t>(levels * nr * nt));
  const std::size_t expected_edges = levels * (nr * nt + (nr - 1) * nt) + (levels - 1) * nr * nt;
  EXPECT_EQ(mesh.edges.size(), expected_edges);
  EXPECT_NO_THROW(mesh.validate(nl));
  std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
  for (const auto& e : mesh.edges) {
    EXPECT_NE(e.a, e.b);
    EXPECT_TRUE(seen.insert(std::minmax(e.a, e.b)).second);
  }
  for (std::size_t i = 0; i < mesh.n_nodes(); ++i) {
    const auto& p = mesh.node_coords[i];
    EXPECT_LE(std::hypot(p[0], p[1]), 5.0 + 1e-12);
    EXPECT_GE(mesh.layer_index[i], 0);
    EXPECT_LT(mesh.layer_index[i], nl);
  }
}

TEST(Synthetic, NoiseIsSeededAndHasTheRequestedSpread) {
  auto c = small_config({30, 60});
  c.noise_sigma = 0.01;
  c.seed = 7;
  const auto a = generate_synthetic_dataset(c);
  const auto b = generate_synthetic_dataset(c);
  EXPECT_EQ(a[0].values, b[0].values);
  c.seed = 8;
  const auto other = generate_synthetic_dataset(c);
  EXPECT_NE(a[0].values, other[0].values);

  c.noise_sigma = 0.0;
  const auto clean = generate_synthetic_dataset(c);
  const Eigen::MatrixXd resid = a[0].values - clean[0].values;
  const double sd = std::sqrt(resid.squaredNorm() / static_cast<double>(resid.size()));
  EXPECT_NEAR(sd, 0.01, 0.001);
}

TEST(Synthetic, RejectsBadConfig) {
  auto c = small_config({20});
  c.n_radial = 1;
  EXPECT_THROW(generate_synthetic_dataset(c), ConfigError);
  c = small_config({20});
  c.n_theta = 3;
  EXPECT_THROW(generate_synthetic_dataset(c), ConfigError);
  c = small_config({20}, 1);
  EXPECT_THROW(generate_synthetic_dataset(c), ConfigError);
  c = small_config({});
  EXPECT_THROW(generate_synthetic_dataset(c), ConfigError);
  c = small_config({20});
  c.noise_sigma = -1.0;
  EXPECT_THROW(generate_synthetic_dataset(c), ConfigError);
  c = small_config({20, 30, 20});
  EXPECT_THROW(generate_synthetic_dataset(c), DuplicateParameterError);
  c = small_config({0.0});
  EXPECT_THROW(generate_synthetic_dataset(c), ConfigError);
}

TEST(SnapshotTensor, ValidatesOnConstruction) {
  const auto mesh = synthetic::cylinder_mesh(2, 4, 2);
  const auto n = static_cast<Eigen::Index>(mesh.n_nodes());
  const SnapshotMatrix a{Eigen::MatrixXd::Zero(n, 2), {20}};
  EXPECT_NO_THROW(SnapshotTensor(mesh, {a}));
  EXPECT_THROW(SnapshotTensor(mesh, {a, SnapshotMatrix{Eigen::MatrixXd::Zero(n, 3), {30}}}), ShapeError);
  EXPECT_THROW(SnapshotTensor(mesh, {a, SnapshotMatrix{Eigen::MatrixXd::Zero(n, 2), {20}}}), DuplicateParameterError);
  SnapshotMatrix bad{Eigen::MatrixXd::Zero(n, 2), {30}};
  bad.values(0, 0) = std::nan("");
  EXPECT_THROW(SnapshotTensor(mesh, {bad}), DataError);
  EXPECT_THROW(SnapshotTensor(mesh, {SnapshotMatrix{Eigen::MatrixXd::Zero(n + 1, 2), {20}}}), ShapeError);

  auto broken = mesh;
  broken.edges.push_back({0, 0});
  EXPECT_THROW(SnapshotTensor(broken, {a}), ConfigError);
  broken = mesh;
  broken.edges.push_back({broken.edges[0].b, broken.edges[0].a});
  EXPECT_THROW(SnapshotTensor(broken, {a}), ConfigError);
  broken = mesh;
  broken.layer_index[3] = 2;  // N_t = 2
  EXPECT_THROW(SnapshotTensor(broken, {a}), ConfigError);
}

TEST(Split, NineFourSplitSizes) {
  const auto t = generate_synthetic_dataset(small_config(dwell_grid()));
  const auto [train, test] = split_dataset(t, {20, 25, 35, 40, 50, 55, 65, 70, 80}, {30, 45, 60, 75});
  EXPECT_EQ(train.size(), 9u);
  EXPECT_EQ(test.size(), 4u);
  EXPECT_EQ(test.dwell_times(), (std::vector<double>{30, 45, 60, 75}));
}

TEST(Split, PreservesMatricesExactly) {
  const auto t = generate_synthetic_dataset(small_config(dwell_grid()));
  const auto [train, test] = split_dataset(t, {80, 20}, {45});
  EXPECT_EQ(train[0].values, t[t.find(80)].values);
  EXPECT_EQ(train[1].values, t[t.find(20)].values);
  EXPECT_EQ(test[0].values, t[t.find(45)].values);
  EXPECT_EQ(train.mesh().edges, t.mesh().edges);
}

TEST(Split, EmptyTestSide) {
  const auto t = generate_synthetic_dataset(small_config({20, 40}));
  const auto [train, test] = split_dataset(t, {20, 40}, {});
  EXPECT_EQ(train.size(), 2u);
  EXPECT_TRUE(test.empty());
  EXPECT_EQ(test.size(), 0u);
}

TEST(Split, Errors) {
  const auto t = generate_synthetic_dataset(small_config(dwell_grid()));
  EXPECT_THROW(split_dataset(t, {33}, {}), LookupError);
  EXPECT_THROW(split_dataset(t, {20, 30}, {30}), SplitError);
}
