#include <gtest/gtest.h>

#include <cstdlib>

#include "romforge/cli.hpp"
#include "romforge/snapshot_io.hpp"
#include "support.hpp"

using namespace romforge;
using testing_support::TempDir;

namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
  nlohmann::json line() const { return nlohmann::json::parse(out); }
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "romforge");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Result r;
  r.code = romforge::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

// Small but full-depth dataset shared by the tests below.
const std::filesystem::path& dataset() {
  static TempDir dir;
  static const bool made = [] {
    const auto r = run_cli({"gen", "--out", (dir / "data").string(), "--dwell-times", "20:80:5", "--layers", "34",
                        "--radial", "2", "--theta", "4"});
    return r.code == 0;
  }();
  static const auto path = dir / "data";
  EXPECT_TRUE(made);
  return path;
}

const std::filesystem::path& rom_dir() {
  static TempDir dir;
  static const bool made = [] {
    return run_cli({"train", "--model", "pod-gpr", "--data", dataset().string(), "--train",
                "20,25,35,40,50,55,65,70,80", "--out", (dir / "rom").string()})
               .code == 0;
  }();
  static const auto path = dir / "rom";
  EXPECT_TRUE(made);
  return path;
}

class EnvGuard {
 public:
  EnvGuard(const char* name, const char* value) : name_(name) {
    if (const char* old = std::getenv(name)) old_ = old;
    setenv(name, value, 1);
  }
  ~EnvGuard() {
    if (old_) setenv(name_, old_->c_str(), 1);
    else unsetenv(name_);
  }

 private:
  const char* name_;
  std::optional<std::string> old_;
};

}  // namespace

TEST(ParseList, ValuesAndRanges) {
  EXPECT_EQ(romforge::cli::parse_list("20:80:5").size(), 13u);
  EXPECT_EQ(romforge::cli::parse_list("20:80:5").back(), 80.0);
  EXPECT_EQ(romforge::cli::parse_list("30,45, 60,75"), (std::vector<double>{30, 45, 60, 75}));
  EXPECT_EQ(romforge::cli::parse_list("20,35,50:60:10"), (std::vector<double>{20, 35, 50, 60}));
  EXPECT_EQ(romforge::cli::parse_list("1.5"), (std::vector<double>{1.5}));
  EXPECT_TRUE(romforge::cli::parse_list("").empty());
  for (const char* bad : {"a", "1,,2", "1:2", "5:1:1", "1:2:0", "1:2:3:4", "3x", "nan"})
    EXPECT_THROW(romforge::cli::parse_list(bad), ConfigError) << bad;
}

TEST(Gen, WritesSnapshotDirectory) {
  const auto meta = read_json_file(dataset() / "meta.json");
  EXPECT_EQ(meta.at("N_mu").get<int>(), 13);
  EXPECT_EQ(meta.at("N_t").get<int>(), 34);
  for (int i = 0; i < 13; ++i) EXPECT_TRUE(std::filesystem::exists(dataset() / snapshot_file_name(i)));
}

TEST(Gen, SingleDwellTimeAndByteIdenticalReruns) {
  TempDir dir;
  for (const char* name : {"a", "b"}) {
    const auto r = run_cli({"gen", "--out", (dir / name).string(), "--dwell-times", "60", "--layers", "5", "--radial",
                        "2", "--theta", "4", "--noise", "0.01", "--seed", "3"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.line().at("N_mu").get<int>(), 1);
    EXPECT_EQ(r.line().at("N_t").get<int>(), 5);
  }
  for (const char* f : {"meta.json", "snap_0.bin"})
    EXPECT_EQ(testing_support::read_bytes(dir / "a" / f), testing_support::read_bytes(dir / "b" / f)) << f;
}

TEST(Train, PodGprArchive) {
  const auto manifest = read_json_file(rom_dir() / "manifest.json");
  EXPECT_TRUE(std::filesystem::exists(rom_dir() / "basis.bin"));
  EXPECT_TRUE(std::filesystem::exists(rom_dir() / "timing.json"));
  const auto rom = load_rom(rom_dir());
  EXPECT_GE(rom.rank(), 1);
  EXPECT_LE(rom.rank(), 9 * 34);
}

TEST(Train, GcaCheckpointAndHistory) {
  TempDir dir;
  const auto r = run_cli({"train", "--model", "gca", "--data", dataset().string(), "--train", "20,50,80", "--val", "35",
                      "--epochs", "5", "--out", (dir / "gca").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.line().at("epochs_run").get<int>(), 5);
  for (const char* f : {"gca.json", "gca_weights.bin", "history.csv", "timing.json"})
    EXPECT_TRUE(std::filesystem::exists(dir / "gca" / f)) << f;
  const auto csv = read_csv(dir / "gca" / "history.csv");
  EXPECT_EQ(csv.rows.size(), 5u);

  const auto p = run_cli({"predict", "--model-dir", (dir / "gca").string(), "--dt", "45", "--out",
                      (dir / "p.bin").string()});
  ASSERT_EQ(p.code, 0) << p.err;
  EXPECT_EQ(p.line().at("model"), "gca");
}

TEST(Train, UnknownModelIsUsageError) {
  const auto r = run_cli({"train", "--model", "svm", "--data", dataset().string(), "--train", "20,30", "--out", "x"});
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(r.err.empty());
  EXPECT_TRUE(r.out.empty());
}

TEST(Predict, FieldAndSidecar) {
  TempDir dir;
  const auto r = run_cli({"predict", "--model-dir", rom_dir().string(), "--dt", "45", "--out", (dir / "f.bin").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const Eigen::MatrixXd field = read_snapshot_file(dir / "f.bin");
  EXPECT_EQ(field.cols(), 1);
  const auto side = read_json_file(dir / "f.bin.json");
  EXPECT_EQ(side.at("N_h").get<Eigen::Index>(), field.rows());
  EXPECT_EQ(side.at("extrapolation").get<bool>(), false);
  EXPECT_EQ(side.at("max_displacement").get<double>(), field.maxCoeff());
  const auto band = side.at("max_node_band_95").get<std::vector<double>>();
  ASSERT_EQ(band.size(), 2u);
  EXPECT_LE(band[0], side.at("max_displacement").get<double>());
  EXPECT_GE(band[1], side.at("max_displacement").get<double>());
  const auto expected = predict_distortion(load_rom(rom_dir()), 45.0).mean_field;
  EXPECT_LE((field.col(0) - expected).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Predict, OutsideTrainingRangeIsFlagged) {
  TempDir dir;
  const auto r = run_cli({"predict", "--model-dir", rom_dir().string(), "--dt", "100", "--out", (dir / "f.bin").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(read_json_file(dir / "f.bin.json").at("extrapolation").get<bool>());
}

TEST(Predict, CorruptArchiveIsIoFailure) {
  TempDir dir;
  std::filesystem::copy(rom_dir(), dir / "rom");
  auto bytes = testing_support::read_bytes(dir / "rom" / "basis.bin");
  bytes.resize(bytes.size() / 3);
  testing_support::write_bytes(dir / "rom" / "basis.bin", bytes);
  const auto r = run_cli({"predict", "--model-dir", (dir / "rom").string(), "--dt", "45", "--out",
                      (dir / "f.bin").string()});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("basis.bin"), std::string::npos) << r.err;
}

TEST(Eval, ReportRowsAndPlots) {
  TempDir dir;
  const auto r = run_cli({"eval", "--model-dir", rom_dir().string(), "--data", dataset().string(), "--test",
                      "30,45,60,75", "--plots", (dir / "plots").string(), "--repeats", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = read_json_file(dir / "plots" / "report.json");
  ASSERT_EQ(report.at("rows").size(), 4u);
  const auto rows = rows_from_json(report.at("rows"));
  double worst = 0.0;
  for (const auto& row : rows) worst = std::max(worst, row.relative_l2);
  EXPECT_EQ(report.at("summary").at("max_relative_l2").get<double>(), worst);
  EXPECT_EQ(r.line().at("max_relative_l2").get<double>(), worst);
  for (const char* f : {"max_displacement.csv", "max_displacement.svg", "coefficients.csv", "coefficients.svg",
                        "timing.json"})
    EXPECT_TRUE(std::filesystem::exists(dir / "plots" / f)) << f;
}

TEST(Eval, EmptyTestListIsUsageError) {
  TempDir dir;
  const auto r = run_cli({"eval", "--model-dir", rom_dir().string(), "--data", dataset().string(), "--test", "",
                      "--plots", (dir / "plots").string()});
  EXPECT_EQ(r.code, 2);
}

TEST(Config, FileValuesAndOverrides) {
  TempDir dir;
  write_json_file({{"dwell_times", "20,40"}, {"layers", 3}, {"radial", 2}, {"theta", 4}, {"out", "gen_out"}},
                  dir / "cfg.json");
  auto r = run_cli({"gen", "--config", (dir / "cfg.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.line().at("N_t").get<int>(), 3);
  EXPECT_TRUE(std::filesystem::exists(dir / "gen_out" / "meta.json"));
  r = run_cli({"gen", "--config", (dir / "cfg.json").string(), "--layers", "4", "--out", (dir / "o2").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.line().at("N_t").get<int>(), 4);

  write_json_file({{"dwell_times", "20"}, {"bogus", 1}}, dir / "bad.json");
  r = run_cli({"gen", "--config", (dir / "bad.json").string(), "--out", (dir / "o3").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("bogus"), std::string::npos) << r.err;
}

TEST(Errors, ConstantDataIsNumericalFailure) {
  TempDir dir;
  const auto mesh = synthetic::cylinder_mesh(2, 4, 3);
  const Eigen::MatrixXd flat = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(mesh.n_nodes()), 3, 0.25);
  save_snapshot_tensor(SnapshotTensor(mesh, {SnapshotMatrix{flat, {20}}, SnapshotMatrix{flat, {40}}}), dir / "d");
  const auto r = run_cli({"train", "--model", "pod-gpr", "--data", (dir / "d").string(), "--train", "20,40", "--out",
                      (dir / "rom").string()});
  EXPECT_EQ(r.code, 4);
}

TEST(Errors, BadThreadEnvironmentIsUsageError) {
  EnvGuard env("ROMFORGE_THREADS", "zero");
  TempDir dir;
  const auto r = run_cli({"train", "--model", "pod-gpr", "--data", dataset().string(), "--train", "20,50,80", "--out",
                      (dir / "rom").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("ROMFORGE_THREADS"), std::string::npos);
}

TEST(Errors, MissingDataIsIoFailure) {
  TempDir dir;
  const auto r = run_cli({"train", "--model", "pod-gpr", "--data", (dir / "nothing").string(), "--train", "20,50",
                      "--out", (dir / "rom").string()});
  EXPECT_EQ(r.code, 3);
}

TEST(Help, PrintsUsageAndSucceeds) {
  const auto r = run_cli({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("train"), std::string::npos);
  EXPECT_EQ(run_cli({}).code, 2);
}
