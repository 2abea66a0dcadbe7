#include <gtest/gtest.h>

#include <random>

#include "romforge/data_model.hpp"
#include "romforge/metrics.hpp"
#include "romforge/rom.hpp"
#include "support.hpp"

using namespace romforge;
using testing_support::TempDir;

namespace {

const std::vector<double> kTrain{20, 25, 35, 40, 50, 55, 65, 70, 80};
const std::vector<double> kTest{30, 45, 60, 75};

SyntheticConfig config() {
  SyntheticConfig c;
  c.n_radial = 4;
  c.n_theta = 8;
  c.n_layers = 8;
  for (int d = 20; d <= 80; d += 5) c.dwell_times.push_back(d);
  return c;
}

struct Fixture {
  SnapshotTensor all = generate_synthetic_dataset(config());
  SnapshotTensor train = split_dataset(all, kTrain, kTest).first;
  SnapshotTensor test = split_dataset(all, kTrain, kTest).second;
  PodGprRom rom = train_pod_gpr(train);
};

const Fixture& fx() {
  static const Fixture f;
  return f;
}

SnapshotTensor scaled(const SnapshotTensor& t, double c) {
  std::vector<SnapshotMatrix> ms;
  for (const auto& m : t.matrices()) ms.push_back({c * m.values, m.parameter});
  return SnapshotTensor(t.mesh(), ms);
}

}  // namespace

TEST(TrainPodGpr, RankBoundsAndShapes) {
  const auto& rom = fx().rom;
  EXPECT_GE(rom.rank(), 1);
  EXPECT_LE(rom.rank(), 9 * fx().train.n_steps());
  EXPECT_EQ(rom.gprs.size(), static_cast<std::size_t>(rom.rank()));
  EXPECT_GE(rom.basis.energy_captured, 0.9999);
  for (const auto& g : rom.gprs) EXPECT_EQ(g.train_inputs, rom.gprs[0].train_inputs);
  EXPECT_EQ(rom.input_norm.offset, 20.0);
  EXPECT_EQ(rom.input_norm.scale, 60.0);
  EXPECT_EQ(rom.training_params.size(), 9u);
}

TEST(TrainPodGpr, TrainingFinalFieldsReconstruct) {
  const auto& rom = fx().rom;
  for (const auto& m : fx().train.matrices()) {
    const Eigen::VectorXd f = m.final_field();
    EXPECT_LE(relative_l2(reconstruct(rom.basis, project(rom.basis, f)), f), 1e-2);
  }
}

TEST(PredictDistortion, TrainingDwellTimesReproduceTheirFields) {
  const auto& rom = fx().rom;
  for (const auto& m : fx().train.matrices()) {
    const auto p = predict_distortion(rom, m.parameter.dwell_time);
    EXPECT_LE((p.mean_field - m.final_field()).cwiseAbs().maxCoeff(), 1e-3);
    EXPECT_FALSE(p.extrapolation);
  }
}

TEST(PredictDistortion, TestPointsAgainstOracle) {
  const auto& rom = fx().rom;
  for (const auto& m : fx().test.matrices()) {
    const auto p = predict_distortion(rom, m.parameter.dwell_time);
    EXPECT_LE(relative_l2(p.mean_field, m.final_field()), 0.02) << m.parameter.dwell_time;
  }
}

TEST(PredictDistortion, BandOrderingAndNonNegativeVariance) {
  const auto& rom = fx().rom;
  for (double dt : {10.0, 20.0, 33.3, 45.0, 79.0, 120.0}) {
    const auto p = predict_distortion(rom, dt);
    EXPECT_TRUE((p.lower_95.array() <= p.mean_field.array()).all());
    EXPECT_TRUE((p.mean_field.array() <= p.upper_95.array()).all());
    EXPECT_TRUE((p.coeff_variances.array() >= 0.0).all());
    const Eigen::VectorXd var = rom.basis.modes.array().square().matrix() * p.coeff_variances;
    EXPECT_LE((p.upper_95 - p.mean_field - 1.96 * var.cwiseSqrt()).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(PredictDistortion, LiesInAffineSpanOfBasis) {
  const auto& rom = fx().rom;
  for (double dt : {22.0, 47.5, 90.0}) {
    const Eigen::VectorXd f = predict_distortion(rom, dt).mean_field;
    EXPECT_LE((f - reconstruct(rom.basis, project(rom.basis, f))).norm(), 1e-10 * std::max(1.0, f.norm()));
  }
}

TEST(PredictDistortion, ExtrapolationFlag) {
  const auto& rom = fx().rom;
  EXPECT_TRUE(predict_distortion(rom, 100.0).extrapolation);
  EXPECT_TRUE(predict_distortion(rom, 19.5).extrapolation);
  EXPECT_FALSE(predict_distortion(rom, 80.0).extrapolation);
  EXPECT_FALSE(predict_distortion(rom, 45.0).extrapolation);
  EXPECT_THROW(predict_distortion(rom, std::nan("")), ConfigError);
}

TEST(PredictDistortion, CoefficientMeansAtTrainingPoints) {
  const auto& rom = fx().rom;
  for (std::size_t j = 0; j < rom.gprs.size(); ++j) {
    const auto& g = rom.gprs[j];
    const double tol = 3.0 * std::sqrt(g.noise_jitter) + 1e-12;  // jitter is the absolute diagonal term
    for (std::size_t i = 0; i < g.size(); ++i)
      EXPECT_NEAR(predict_gpr(g, g.train_inputs[i]).mean, g.train_targets[i], tol) << "mode " << j;
  }
}

TEST(TrainPodGpr, LinearInTheData) {
  const double c = 3.0;
  const auto big = train_pod_gpr(scaled(fx().train, c));
  const auto& rom = fx().rom;
  ASSERT_EQ(big.rank(), rom.rank());
  for (double dt : {30.0, 45.0, 60.0, 75.0}) {
    const Eigen::VectorXd a = predict_distortion(rom, dt).mean_field - rom.basis.reference;
    const Eigen::VectorXd b = predict_distortion(big, dt).mean_field - big.basis.reference;
    EXPECT_LE((b - c * a).norm(), 1e-8 * (c * a).norm()) << dt;
  }
}

TEST(TrainPodGpr, ThreadCountDoesNotChangeTheModel) {
  RomConfig cfg;
  cfg.threads = 4;
  const auto par = train_pod_gpr(fx().train, cfg);
  const auto& rom = fx().rom;
  ASSERT_EQ(par.rank(), rom.rank());
  for (std::size_t j = 0; j < par.gprs.size(); ++j) {
    EXPECT_EQ(par.gprs[j].kernel.signal_variance, rom.gprs[j].kernel.signal_variance);
    EXPECT_EQ(par.gprs[j].kernel.length_scale, rom.gprs[j].kernel.length_scale);
  }
}

TEST(TrainPodGpr, ConcurrentPredictionsAgree) {
  const auto& rom = fx().rom;
  std::vector<double> dts{21, 33, 47, 58, 66, 79};
  std::vector<Eigen::VectorXd> out(dts.size());
  parallel_for(dts.size(), 3, [&](std::size_t i) { out[i] = predict_distortion(rom, dts[i]).mean_field; });
  for (std::size_t i = 0; i < dts.size(); ++i) EXPECT_EQ(out[i], predict_distortion(rom, dts[i]).mean_field);
}

TEST(TrainPodGpr, Errors) {
  const auto one = split_dataset(fx().all, {20}, {}).first;
  EXPECT_THROW(train_pod_gpr(one), ConfigError);
  const auto& t = fx().train;
  std::vector<SnapshotMatrix> same{{t[0].values, {20}}, {t[0].values, {30}}};
  // identical matrices: POD still has the step-to-step variation, so the fit goes through
  EXPECT_NO_THROW(train_pod_gpr(SnapshotTensor(t.mesh(), same)));
  const Eigen::MatrixXd flat = Eigen::MatrixXd::Constant(t.n_nodes(), t.n_steps(), 0.5);
  std::vector<SnapshotMatrix> constant{{flat, {20}}, {flat, {30}}};
  EXPECT_THROW(train_pod_gpr(SnapshotTensor(t.mesh(), constant)), DegenerateError);
  RomConfig bad;
  bad.energy_threshold = 0.0;
  EXPECT_THROW(train_pod_gpr(t, bad), ConfigError);
}

TEST(RomArchive, RoundTripPredictionsIdentical) {
  TempDir dir;
  const auto& rom = fx().rom;
  save_rom(rom, dir.path());
  for (const char* f : {"basis.bin", "gprs.json", "norm.json", "manifest.json"})
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  const auto back = load_rom(dir.path());
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(10, 90);
  for (int i = 0; i < 10; ++i) {
    const double dt = u(rng);
    const auto a = predict_distortion(rom, dt);
    const auto b = predict_distortion(back, dt);
    EXPECT_LE((a.mean_field - b.mean_field).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((a.upper_95 - b.upper_95).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(a.extrapolation, b.extrapolation);
  }
  for (std::size_t j = 0; j < rom.gprs.size(); ++j) {
    EXPECT_EQ(back.gprs[j].kernel.signal_variance, rom.gprs[j].kernel.signal_variance);
    EXPECT_EQ(back.gprs[j].noise_jitter, rom.gprs[j].noise_jitter);
    EXPECT_EQ(back.gprs[j].train_targets, rom.gprs[j].train_targets);
  }
  EXPECT_EQ(back.basis.modes, rom.basis.modes);
}

TEST(RomArchive, MissingModeNamesIt) {
  TempDir dir;
  save_rom(fx().rom, dir.path());
  auto gprs = read_json_file(dir / "gprs.json");
  ASSERT_GE(gprs["modes"].size(), 2u);
  gprs["modes"].erase(1);
  write_json_file(gprs, dir / "gprs.json");
  try {
    load_rom(dir.path());
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("mode 1"), std::string::npos) << e.what();
  }
}

TEST(RomArchive, CorruptOrMissingPieces) {
  TempDir dir;
  save_rom(fx().rom, dir.path());
  auto bytes = testing_support::read_bytes(dir / "basis.bin");
  auto cut = bytes;
  cut.resize(cut.size() / 2);
  testing_support::write_bytes(dir / "basis.bin", cut);
  EXPECT_THROW(load_rom(dir.path()), CorruptionError);
  testing_support::write_bytes(dir / "basis.bin", bytes);

  auto norm = read_json_file(dir / "norm.json");
  norm["version"] = 99;
  write_json_file(norm, dir / "norm.json");
  EXPECT_THROW(load_rom(dir.path()), FormatError);
  norm["version"] = kRomArchiveVersion;
  write_json_file(norm, dir / "norm.json");
  EXPECT_NO_THROW(load_rom(dir.path()));

  std::filesystem::remove(dir / "norm.json");
  try {
    load_rom(dir.path());
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("norm.json"), std::string::npos);
  }
  EXPECT_THROW(load_rom(dir / "absent"), FormatError);
}
