#include "rlpr/net/arch.hpp"

#include <cmath>
#include <stdexcept>

#include "rlpr/core/rng.hpp"

namespace rlpr::net {

std::string to_string(Pool p) { return p == Pool::cap ? "cap" : "cmp"; }

Pool pool_from_string(const std::string& s) {
  if (s == "cap") return Pool::cap;
  if (s == "cmp") return Pool::cmp;
  throw std::invalid_argument("unknown pool '" + s + "' (expected cap or cmp)");
}

void ArchConfig::validate() const {
  if (patch_rows < 1 || patch_cols < 1) throw std::invalid_argument("arch: patch size must be >= 1");
  if (embed_dim < 1 || pce_hidden < 1) throw std::invalid_argument("arch: PCE dims must be >= 1");
  if (backbone_c1 < 1 || backbone_c2 < 1) throw std::invalid_argument("arch: backbone channels must be >= 1");
  if (attn_dim != backbone_c2)
    throw std::invalid_argument("arch: attn_dim must equal backbone_c2");
  if (attn_heads < 1 || attn_dim % attn_heads != 0)
    throw std::invalid_argument("arch: attn_dim must be divisible by attn_heads");
  if (attn_ff < 1 || attn_layers < 1) throw std::invalid_argument("arch: attention config invalid");
  if (vlad_clusters < 1) throw std::invalid_argument("arch: vlad_clusters must be >= 1");
  if (descriptor_dim < 1) throw std::invalid_argument("arch: descriptor_dim must be >= 1");
  if (!use_local_head && !use_global_head)
    throw std::invalid_argument("arch: at least one descriptor head must be enabled");
}

NetShapes derive_shapes(const ArchConfig& arch, const GridShape& grid) {
  arch.validate();
  if (grid.rows < 1 || grid.cols < 1) throw std::invalid_argument("grid: dims must be >= 1");
  auto ceil_div = [](int a, int b) { return (a + b - 1) / b; };
  NetShapes s;
  s.patch_h = ceil_div(grid.rows, arch.patch_rows);
  s.patch_w = ceil_div(grid.cols, arch.patch_cols);
  s.fm_h = ceil_div(ceil_div(grid.rows, 2), 2);  // two stride-2 ResBlocks
  s.fm_w = ceil_div(ceil_div(grid.cols, 2), 2);
  return s;
}

int full_descriptor_dim(const ArchConfig& arch) {
  return arch.descriptor_dim * ((arch.use_local_head ? 1 : 0) + (arch.use_global_head ? 1 : 0));
}

std::uint64_t arch_fingerprint(const ArchConfig& arch, const GridShape& grid) {
  std::uint64_t h = 0x524c505221ULL;  // "RLPR!"
  auto mix = [&h](std::uint64_t v) { h = mix_seeds(h, v); };
  mix(grid.rows);
  mix(grid.cols);
  mix(arch.patch_rows);
  mix(arch.patch_cols);
  mix(arch.embed_dim);
  mix(arch.pce_hidden);
  mix(arch.backbone_c1);
  mix(arch.backbone_c2);
  mix(arch.attn_dim);
  mix(arch.attn_heads);
  mix(arch.attn_ff);
  mix(arch.attn_layers);
  mix(arch.positional_encoding ? 1 : 0);
  mix(arch.vlad_clusters);
  mix(arch.descriptor_dim);
  mix(arch.pool == Pool::cap ? 0 : 1);
  mix(arch.use_local_head ? 1 : 0);
  mix(arch.use_global_head ? 1 : 0);
  mix(arch.use_pce ? 1 : 0);
  return h;
}

}  // namespace rlpr::net
