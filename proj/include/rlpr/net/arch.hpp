#pragma once

#include <cstdint>
#include <string>

namespace rlpr::net {

enum class Pool { cap, cmp };

std::string to_string(Pool p);
Pool pool_from_string(const std::string& s);

// Dual-stream encoder hyperparameters. Both branches share one ArchConfig;
// parameter spaces stay independent. The default is the smallest
// configuration that exercises every mechanism and trains on a CPU.
struct ArchConfig {
  int patch_rows = 5;
  int patch_cols = 5;
  int embed_dim = 16;   // C, channels after patchify
  int pce_hidden = 16;  // channels between the two PCE convolutions
  int backbone_c1 = 32;
  int backbone_c2 = 64;
  int attn_dim = 64;  // must equal backbone_c2 (tokens feed attention directly)
  int attn_heads = 4;
  int attn_ff = 128;
  int attn_layers = 1;
  bool positional_encoding = true;
  int vlad_clusters = 16;   // K
  int descriptor_dim = 256; // D; d_full is 2D
  Pool pool = Pool::cap;

  bool use_local_head = true;   // LD ablation switch
  bool use_global_head = true;  // GD ablation switch
  bool use_pce = true;          // PCE ablation switch

  void validate() const;
};

// BEV dimensions a parameter set is bound to (head shapes depend on them).
struct GridShape {
  int rows = 50;
  int cols = 225;
  bool operator==(const GridShape&) const = default;
};

struct NetShapes {
  int patch_h = 0, patch_w = 0;  // patch grid H x W (after zero padding)
  int fm_h = 0, fm_w = 0;        // feature map H' x W'
  int tokens() const { return fm_h * fm_w; }
};

NetShapes derive_shapes(const ArchConfig& arch, const GridShape& grid);

// Length of d_full: 2D with both heads enabled, D with one.
int full_descriptor_dim(const ArchConfig& arch);

// Stable digest of (arch, grid); checkpoints embed it and loading rejects a
// mismatch.
std::uint64_t arch_fingerprint(const ArchConfig& arch, const GridShape& grid);

}  // namespace rlpr::net
