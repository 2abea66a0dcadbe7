#pragma once

// On-disk snapshot tensors: meta.json plus one SNPT binary per parameter.
//
// SNPT layout (all little-endian):
//   "SNPT" | u8 version=1 | u32 N_h | u32 N_t | N_h*N_t f64, node-major

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"
#include "romforge/binary_io.hpp"
#include "romforge/data_model.hpp"

namespace romforge {

inline constexpr std::uint8_t kSnapshotVersion = 1;

inline std::string snapshot_file_name(std::size_t i) { return "snap_" + std::to_string(i) + ".bin"; }

inline void write_snapshot_file(const Eigen::MatrixXd& values, const std::filesystem::path& file) {
  io::ByteWriter w;
  w.magic("SNPT");
  w.u8(kSnapshotVersion);
  w.u32(static_cast<std::uint32_t>(values.rows()));
  w.u32(static_cast<std::uint32_t>(values.cols()));
  for (Eigen::Index p = 0; p < values.rows(); ++p)
    for (Eigen::Index n = 0; n < values.cols(); ++n) w.f64(values(p, n));
  w.write_file(file);
}

inline Eigen::MatrixXd read_snapshot_file(const std::filesystem::path& file) {
  auto r = io::ByteReader::from_file(file);
  if (!r.magic("SNPT")) throw FormatError("'" + file.string() + "' is not an SNPT file (bad magic)");
  if (auto v = r.u8(); v != kSnapshotVersion)
    throw FormatError("'" + file.string() + "' has unsupported SNPT version " + std::to_string(v));
  const auto rows = r.u32();
  const auto cols = r.u32();
  const auto expected = static_cast<std::size_t>(rows) * cols * 8;
  if (r.remaining() != expected)
    throw CorruptionError("'" + file.string() + "' holds " + std::to_string(r.remaining()) +
                          " payload bytes, header implies " + std::to_string(expected));
  Eigen::MatrixXd values(rows, cols);
  for (Eigen::Index p = 0; p < values.rows(); ++p)
    for (Eigen::Index n = 0; n < values.cols(); ++n) values(p, n) = r.f64();
  if (!values.allFinite()) throw DataError("'" + file.string() + "' contains NaN or Inf");
  return values;
}

inline nlohmann::json mesh_to_json(const MeshGeometry& mesh) {
  nlohmann::json coords = nlohmann::json::array();
  for (const auto& c : mesh.node_coords) coords.push_back({c[0], c[1], c[2]});
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& e : mesh.edges) edges.push_back({e.a, e.b});
  return {{"node_coords", coords}, {"layer_index", mesh.layer_index}, {"edges", edges}};
}

inline MeshGeometry mesh_from_json(const nlohmann::json& j) {
  MeshGeometry mesh;
  for (const auto& c : j.at("node_coords"))
    mesh.node_coords.push_back({c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>()});
  mesh.layer_index = j.at("layer_index").get<std::vector<int>>();
  for (const auto& e : j.at("edges")) mesh.edges.push_back({e.at(0).get<std::uint32_t>(), e.at(1).get<std::uint32_t>()});
  return mesh;
}

inline void write_json_file(const nlohmann::json& j, const std::filesystem::path& file, int indent = -1) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw WriteError("cannot open '" + file.string() + "' for writing");
  out << j.dump(indent) << '\n';
  if (!out) throw WriteError("write to '" + file.string() + "' failed");
}

inline nlohmann::json read_json_file(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw FormatError("missing file '" + file.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("'" + file.string() + "' is not valid JSON: " + e.what());
  }
}

inline void save_snapshot_tensor(const SnapshotTensor& tensor, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw WriteError("cannot create directory '" + dir.string() + "': " + ec.message());
  nlohmann::json meta = mesh_to_json(tensor.mesh());
  meta["version"] = kSnapshotVersion;
  meta["N_mu"] = tensor.size();
  meta["N_h"] = tensor.n_nodes();
  meta["N_t"] = tensor.n_steps();
  meta["dwell_times"] = tensor.dwell_times();
  write_json_file(meta, dir / "meta.json");
  for (std::size_t i = 0; i < tensor.size(); ++i)
    write_snapshot_file(tensor[i].values, dir / snapshot_file_name(i));
}

inline SnapshotTensor load_snapshot_tensor(const std::filesystem::path& dir) {
  const auto meta = read_json_file(dir / "meta.json");
  try {
    if (meta.at("version").get<int>() != kSnapshotVersion)
      throw FormatError("meta.json version " + meta.at("version").dump() + " is not supported");
    const auto n_mu = meta.at("N_mu").get<std::size_t>();
    const auto n_h = meta.at("N_h").get<Eigen::Index>();
    const auto n_t = meta.at("N_t").get<Eigen::Index>();
    const auto dts = meta.at("dwell_times").get<std::vector<double>>();
    if (dts.size() != n_mu) throw CorruptionError("meta.json: dwell_times length != N_mu");
    auto mesh = mesh_from_json(meta);
    if (static_cast<Eigen::Index>(mesh.n_nodes()) != n_h)
      throw CorruptionError("meta.json: node_coords length != N_h");

    std::vector<SnapshotMatrix> matrices;
    for (std::size_t i = 0; i < n_mu; ++i) {
      const auto file = dir / snapshot_file_name(i);
      auto values = read_snapshot_file(file);
      if (values.rows() != n_h || values.cols() != n_t)
        throw CorruptionError("'" + file.string() + "' is " + std::to_string(values.rows()) + "x" +
                              std::to_string(values.cols()) + ", meta.json declares " +
                              std::to_string(n_h) + "x" + std::to_string(n_t));
      matrices.push_back({std::move(values), ParameterPoint{dts[i]}});
    }
    return SnapshotTensor(std::move(mesh), std::move(matrices));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("meta.json in '" + dir.string() + "' is malformed: " + e.what());
  }
}

}  // namespace romforge
