#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "moed/config.hpp"
#include "moed/posterior.hpp"

namespace moed {
namespace io {

inline std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// RFC-4180 style CSV with a header row and full double precision.
inline void write_csv(const std::string& path, const Eigen::MatrixXd& M,
                      const std::vector<std::string>& header = {}) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  if (!header.empty()) {
    for (size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
    out << "\r\n";
  } else {
    for (Eigen::Index j = 0; j < M.cols(); ++j) out << (j ? "," : "") << "c" << j;
    out << "\r\n";
  }
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    for (Eigen::Index j = 0; j < M.cols(); ++j) out << (j ? "," : "") << fmt17(M(i, j));
    out << "\r\n";
  }
}

inline Eigen::MatrixXd read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::string line;
  std::vector<std::vector<double>> rows;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first) {  // header
      first = false;
      continue;
    }
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) return {};
  Eigen::MatrixXd M(rows.size(), rows[0].size());
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size()) throw std::runtime_error("ragged CSV: " + path);
    for (size_t j = 0; j < rows[i].size(); ++j) M(i, j) = rows[i][j];
  }
  return M;
}

inline std::uint64_t fnv1a_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::uint64_t h = 14695981039346656037ULL;
  char c;
  while (in.get(c)) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

inline void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

inline nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  return nlohmann::json::parse(in);
}

/// Kernel cache: kernels/{C.csv,D.csv,F.csv,G.csv,meta.json} under `dir`.
/// meta.json carries the config fingerprint, solve counters, and per-file
/// checksums; load verifies all of them.
inline void write_kernel_cache(const std::string& dir, const ExperimentConfig& cfg,
                               const KernelMatrices& k) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "kernels");
  const std::string base = (fs::path(dir) / "kernels").string();
  write_csv(base + "/C.csv", k.C);
  write_csv(base + "/D.csv", k.D);
  write_csv(base + "/F.csv", k.F_dense);
  write_csv(base + "/G.csv", k.G_dense);
  nlohmann::json meta;
  meta["fingerprint"] = cfg.fingerprint();
  meta["n_d"] = k.n_d();
  meta["n_m"] = k.F_dense.cols();
  meta["n_b"] = k.G_dense.cols();
  meta["forward_solves"] = k.n_forward_solves;
  meta["adjoint_solves"] = k.n_adjoint_solves;
  meta["checksums"] = {{"C.csv", fnv1a_file(base + "/C.csv")},
                       {"D.csv", fnv1a_file(base + "/D.csv")},
                       {"F.csv", fnv1a_file(base + "/F.csv")},
                       {"G.csv", fnv1a_file(base + "/G.csv")}};
  write_json(base + "/meta.json", meta);
}

inline bool kernel_cache_exists(const std::string& dir) {
  return std::filesystem::exists(std::filesystem::path(dir) / "kernels" / "meta.json");
}

inline KernelMatrices load_kernel_cache(const std::string& dir, const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  const std::string base = (fs::path(dir) / "kernels").string();
  const nlohmann::json meta = read_json(base + "/meta.json");
  if (meta.at("fingerprint").get<std::uint64_t>() != cfg.fingerprint())
    throw std::runtime_error("kernel cache fingerprint does not match the config");
  for (const auto& name : {"C.csv", "D.csv", "F.csv", "G.csv"}) {
    const std::uint64_t want = meta.at("checksums").at(name).get<std::uint64_t>();
    if (fnv1a_file(base + "/" + name) != want)
      throw std::runtime_error(std::string("kernel cache checksum mismatch: ") + name);
  }
  KernelMatrices k;
  k.C = read_csv(base + "/C.csv");
  k.D = read_csv(base + "/D.csv");
  k.F_dense = read_csv(base + "/F.csv");
  k.G_dense = read_csv(base + "/G.csv");
  k.n_forward_solves = meta.at("forward_solves").get<long>();
  k.n_adjoint_solves = meta.at("adjoint_solves").get<long>();
  return k;
}

/// Binary trajectory dump: magic, int64 dims (n_t, n_b), row-major doubles.
inline void write_trajectory_bin(const std::string& path, const Eigen::MatrixXd& traj) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  const char magic[8] = {'M', 'O', 'E', 'D', 'T', 'R', 'J', '1'};
  out.write(magic, 8);
  const std::int64_t nt = traj.rows(), nb = traj.cols();
  out.write(reinterpret_cast<const char*>(&nt), 8);
  out.write(reinterpret_cast<const char*>(&nb), 8);
  for (Eigen::Index i = 0; i < traj.rows(); ++i)
    for (Eigen::Index j = 0; j < traj.cols(); ++j) {
      const double v = traj(i, j);
      out.write(reinterpret_cast<const char*>(&v), 8);
    }
}

inline Eigen::MatrixXd read_trajectory_bin(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  char magic[8];
  in.read(magic, 8);
  if (std::string(magic, 8) != "MOEDTRJ1") throw std::runtime_error("bad trajectory file: " + path);
  std::int64_t nt = 0, nb = 0;
  in.read(reinterpret_cast<char*>(&nt), 8);
  in.read(reinterpret_cast<char*>(&nb), 8);
  Eigen::MatrixXd traj(nt, nb);
  for (std::int64_t i = 0; i < nt; ++i)
    for (std::int64_t j = 0; j < nb; ++j) in.read(reinterpret_cast<char*>(&traj(i, j)), 8);
  if (!in) throw std::runtime_error("truncated trajectory file: " + path);
  return traj;
}

}  // namespace io
}  // namespace moed
