#pragma once

#include <filesystem>
#include <fstream>

#include "rlpr/core/io.hpp"
#include "rlpr/net/params.hpp"

namespace rlpr::net {

inline constexpr char kCkptMagic[9] = "RLPRCKPT";
inline constexpr std::uint16_t kCkptVersion = 1;

// Container: magic, version u16, fingerprint u64, tensor count u32, then per
// tensor: name, rows u32, cols u32, row-major f32 payload. Little-endian
// throughout. The training pipeline runs in f32, so save -> load is lossless.
template <class S>
void save_checkpoint(const std::filesystem::path& path, const BranchParams<S>& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  io::write_magic(os, kCkptMagic);
  io::write_pod<std::uint16_t>(os, kCkptVersion);
  io::write_pod<std::uint64_t>(os, arch_fingerprint(params.arch, params.grid));
  const auto tensors = params.tensors();
  io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    io::write_string(os, t.name);
    io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.mat->rows()));
    io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.mat->cols()));
    for (Eigen::Index r = 0; r < t.mat->rows(); ++r)
      for (Eigen::Index c = 0; c < t.mat->cols(); ++c)
        io::write_pod<float>(os, static_cast<float>((*t.mat)(r, c)));
  }
  if (!os) throw std::runtime_error("short write on checkpoint: " + path.string());
}

template <class S>
BranchParams<S> load_checkpoint(const std::filesystem::path& path, const ArchConfig& arch,
                                const GridShape& grid, const std::string& branch) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
  io::expect_magic(is, kCkptMagic, "checkpoint");
  const auto version = io::read_pod<std::uint16_t>(is);
  if (version != kCkptVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  const auto fingerprint = io::read_pod<std::uint64_t>(is);
  if (fingerprint != arch_fingerprint(arch, grid))
    throw std::runtime_error("checkpoint arch fingerprint mismatch: " + path.string());

  BranchParams<S> params = make_branch_skeleton<S>(arch, grid, branch);
  auto tensors = params.tensors();
  const auto count = io::read_pod<std::uint32_t>(is);
  if (count != tensors.size())
    throw std::runtime_error("checkpoint tensor count mismatch: " + path.string());
  for (auto& t : tensors) {
    const std::string name = io::read_string(is);
    if (name != t.name)
      throw std::runtime_error("checkpoint tensor order mismatch at '" + name + "'");
    const auto rows = io::read_pod<std::uint32_t>(is);
    const auto cols = io::read_pod<std::uint32_t>(is);
    if (rows != static_cast<std::uint32_t>(t.mat->rows()) ||
        cols != static_cast<std::uint32_t>(t.mat->cols()))
      throw std::runtime_error("checkpoint tensor shape mismatch at '" + name + "'");
    for (std::uint32_t r = 0; r < rows; ++r)
      for (std::uint32_t c = 0; c < cols; ++c)
        (*t.mat)(r, c) = static_cast<S>(io::read_pod<float>(is));
  }
  return params;
}

}  // namespace rlpr::net
