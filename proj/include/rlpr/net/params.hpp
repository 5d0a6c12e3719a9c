#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "rlpr/core/rng.hpp"
#include "rlpr/core/types.hpp"
#include "rlpr/net/arch.hpp"

namespace rlpr::net {

template <class S>
struct NamedTensor {
  std::string name;
  Mat<S>* mat;
};

template <class S>
struct NamedTensorConst {
  std::string name;
  const Mat<S>* mat;
};

template <class S>
struct AttnLayerParams {
  Mat<S> wq, bq, wk, bk, wv, bv, wo, bo;
  Mat<S> ln1_g, ln1_b;
  Mat<S> ff1_w, ff1_b, ff2_w, ff2_b;
  Mat<S> ln2_g, ln2_b;
};

// One modality branch's full parameter set. Biases are stored as (n, 1)
// matrices so every tensor flows through the same visit/serialize/update
// machinery.
template <class S>
struct BranchParams {
  ArchConfig arch;
  GridShape grid;
  std::string branch = "radar";  // radar | lidar
  bool frozen = false;
  std::uint64_t init_seed = 0;

  // Polar Context Enhancer
  Mat<S> pce_embed_w, pce_embed_b;  // (C, pr*pc), (C, 1)
  Mat<S> ssm_conv_k;                // (C, 3) non-causal depthwise kernel
  Mat<S> ssm_decay;                 // (C, 1), a = exp(-softplus(.))
  Mat<S> ssm_in_b, ssm_out_c, ssm_skip_d;  // (C, 1) each
  Mat<S> pce_conv1_w, pce_conv1_b;  // (hid, 2C*9), (hid, 1)
  Mat<S> pce_conv2_w, pce_conv2_b;  // (1, hid*9), (1, 1)

  // Backbone: two ResBlocks
  Mat<S> rb1_conv1_w, rb1_conv1_b;  // (c1, 1*9)
  Mat<S> rb1_conv2_w, rb1_conv2_b;  // (c1, c1*9)
  Mat<S> rb1_skip_w, rb1_skip_b;    // (c1, 1)
  Mat<S> rb2_conv1_w, rb2_conv1_b;  // (c2, c1*9)
  Mat<S> rb2_conv2_w, rb2_conv2_b;  // (c2, c2*9)
  Mat<S> rb2_skip_w, rb2_skip_b;    // (c2, c1)

  // Local head (CAP/CMP + affine)
  Mat<S> loc_w, loc_b;  // (D, fm_h*fm_w), (D, 1)

  // Global head (transformer encoder + VLAD)
  std::vector<AttnLayerParams<S>> attn;
  Mat<S> vlad_assign_w, vlad_assign_b;  // (K, d), (K, 1)
  Mat<S> vlad_centers;                  // (K, d), rows on the unit sphere at init
  Mat<S> glob_w, glob_b;                // (D, K*d), (D, 1)

  std::vector<NamedTensor<S>> tensors();
  std::vector<NamedTensorConst<S>> tensors() const;

  std::size_t parameter_count() const;

  // Same shapes, every entry zero; used for gradients and optimizer state.
  BranchParams<S> zeros_like() const;

  template <class T>
  BranchParams<T> cast() const;
};

namespace detail {

template <class S, class P, class Fn>
void visit_tensors(P& p, Fn&& fn) {
  fn("pce_embed_w", p.pce_embed_w);
  fn("pce_embed_b", p.pce_embed_b);
  fn("ssm_conv_k", p.ssm_conv_k);
  fn("ssm_decay", p.ssm_decay);
  fn("ssm_in_b", p.ssm_in_b);
  fn("ssm_out_c", p.ssm_out_c);
  fn("ssm_skip_d", p.ssm_skip_d);
  fn("pce_conv1_w", p.pce_conv1_w);
  fn("pce_conv1_b", p.pce_conv1_b);
  fn("pce_conv2_w", p.pce_conv2_w);
  fn("pce_conv2_b", p.pce_conv2_b);
  fn("rb1_conv1_w", p.rb1_conv1_w);
  fn("rb1_conv1_b", p.rb1_conv1_b);
  fn("rb1_conv2_w", p.rb1_conv2_w);
  fn("rb1_conv2_b", p.rb1_conv2_b);
  fn("rb1_skip_w", p.rb1_skip_w);
  fn("rb1_skip_b", p.rb1_skip_b);
  fn("rb2_conv1_w", p.rb2_conv1_w);
  fn("rb2_conv1_b", p.rb2_conv1_b);
  fn("rb2_conv2_w", p.rb2_conv2_w);
  fn("rb2_conv2_b", p.rb2_conv2_b);
  fn("rb2_skip_w", p.rb2_skip_w);
  fn("rb2_skip_b", p.rb2_skip_b);
  fn("loc_w", p.loc_w);
  fn("loc_b", p.loc_b);
  for (std::size_t l = 0; l < p.attn.size(); ++l) {
    const std::string pre = "attn" + std::to_string(l) + ".";
    auto& a = p.attn[l];
    fn(pre + "wq", a.wq);
    fn(pre + "wq_b", a.bq);
    fn(pre + "wk", a.wk);
    fn(pre + "wk_b", a.bk);
    fn(pre + "wv", a.wv);
    fn(pre + "wv_b", a.bv);
    fn(pre + "wo", a.wo);
    fn(pre + "wo_b", a.bo);
    fn(pre + "ln1_g", a.ln1_g);
    fn(pre + "ln1_b", a.ln1_b);
    fn(pre + "ff1_w", a.ff1_w);
    fn(pre + "ff1_b", a.ff1_b);
    fn(pre + "ff2_w", a.ff2_w);
    fn(pre + "ff2_b", a.ff2_b);
    fn(pre + "ln2_g", a.ln2_g);
    fn(pre + "ln2_b", a.ln2_b);
  }
  fn("vlad_assign_w", p.vlad_assign_w);
  fn("vlad_assign_b", p.vlad_assign_b);
  fn("vlad_centers", p.vlad_centers);
  fn("glob_w", p.glob_w);
  fn("glob_b", p.glob_b);
}

}  // namespace detail

template <class S>
std::vector<NamedTensor<S>> BranchParams<S>::tensors() {
  std::vector<NamedTensor<S>> out;
  detail::visit_tensors<S>(*this, [&out](const std::string& name, Mat<S>& m) {
    out.push_back({name, &m});
  });
  return out;
}

template <class S>
std::vector<NamedTensorConst<S>> BranchParams<S>::tensors() const {
  std::vector<NamedTensorConst<S>> out;
  detail::visit_tensors<S>(*this, [&out](const std::string& name, const Mat<S>& m) {
    out.push_back({name, &m});
  });
  return out;
}

template <class S>
std::size_t BranchParams<S>::parameter_count() const {
  std::size_t n = 0;
  detail::visit_tensors<S>(*this, [&n](const std::string&, const Mat<S>& m) {
    n += static_cast<std::size_t>(m.size());
  });
  return n;
}

template <class S>
BranchParams<S> BranchParams<S>::zeros_like() const {
  BranchParams<S> z = *this;
  detail::visit_tensors<S>(z, [](const std::string&, Mat<S>& m) { m.setZero(); });
  return z;
}

template <class S>
template <class T>
BranchParams<T> BranchParams<S>::cast() const {
  BranchParams<T> out;
  out.arch = arch;
  out.grid = grid;
  out.branch = branch;
  out.frozen = frozen;
  out.init_seed = init_seed;
  out.attn.resize(attn.size());
  auto dst = out.tensors();
  auto src = tensors();
  for (std::size_t i = 0; i < src.size(); ++i)
    *dst[i].mat = src[i].mat->template cast<T>();
  return out;
}

// Allocates every tensor per (arch, grid) with zero contents.
template <class S>
BranchParams<S> make_branch_skeleton(const ArchConfig& arch, const GridShape& grid,
                                     const std::string& branch) {
  const NetShapes shapes = derive_shapes(arch, grid);
  BranchParams<S> p;
  p.arch = arch;
  p.grid = grid;
  p.branch = branch;

  const int P = arch.patch_rows * arch.patch_cols;
  const int C = arch.embed_dim;
  const int hid = arch.pce_hidden;
  const int c1 = arch.backbone_c1;
  const int c2 = arch.backbone_c2;
  const int d = arch.attn_dim;
  const int K = arch.vlad_clusters;
  const int D = arch.descriptor_dim;

  auto zeros = [](int r, int c) { return Mat<S>::Zero(r, c).eval(); };

  p.pce_embed_w = zeros(C, P);
  p.pce_embed_b = zeros(C, 1);
  p.ssm_conv_k = zeros(C, 3);
  p.ssm_decay = zeros(C, 1);
  p.ssm_in_b = zeros(C, 1);
  p.ssm_out_c = zeros(C, 1);
  p.ssm_skip_d = zeros(C, 1);
  p.pce_conv1_w = zeros(hid, 2 * C * 9);
  p.pce_conv1_b = zeros(hid, 1);
  p.pce_conv2_w = zeros(1, hid * 9);
  p.pce_conv2_b = zeros(1, 1);

  p.rb1_conv1_w = zeros(c1, 9);
  p.rb1_conv1_b = zeros(c1, 1);
  p.rb1_conv2_w = zeros(c1, c1 * 9);
  p.rb1_conv2_b = zeros(c1, 1);
  p.rb1_skip_w = zeros(c1, 1);
  p.rb1_skip_b = zeros(c1, 1);
  p.rb2_conv1_w = zeros(c2, c1 * 9);
  p.rb2_conv1_b = zeros(c2, 1);
  p.rb2_conv2_w = zeros(c2, c2 * 9);
  p.rb2_conv2_b = zeros(c2, 1);
  p.rb2_skip_w = zeros(c2, c1);
  p.rb2_skip_b = zeros(c2, 1);

  p.loc_w = zeros(D, shapes.tokens());
  p.loc_b = zeros(D, 1);

  p.attn.resize(arch.attn_layers);
  for (auto& a : p.attn) {
    a.wq = zeros(d, d);
    a.bq = zeros(d, 1);
    a.wk = zeros(d, d);
    a.bk = zeros(d, 1);
    a.wv = zeros(d, d);
    a.bv = zeros(d, 1);
    a.wo = zeros(d, d);
    a.bo = zeros(d, 1);
    a.ln1_g = zeros(d, 1);
    a.ln1_b = zeros(d, 1);
    a.ff1_w = zeros(arch.attn_ff, d);
    a.ff1_b = zeros(arch.attn_ff, 1);
    a.ff2_w = zeros(d, arch.attn_ff);
    a.ff2_b = zeros(d, 1);
    a.ln2_g = zeros(d, 1);
    a.ln2_b = zeros(d, 1);
  }

  p.vlad_assign_w = zeros(K, d);
  p.vlad_assign_b = zeros(K, 1);
  p.vlad_centers = zeros(K, d);
  p.glob_w = zeros(D, K * d);
  p.glob_b = zeros(D, 1);
  return p;
}

// Deterministic initialization: weights are fan-in-scaled uniform
// (+-sqrt(3/fan_in), fan_in = columns), biases zero, LayerNorm gains one,
// VLAD centers on the unit sphere, SSM decay pre-activations in [-2, 0].
// Draw order is the tensor visit order, row-major within each tensor.
template <class S>
BranchParams<S> init_params(std::uint64_t seed, const ArchConfig& arch, const GridShape& grid,
                            const std::string& branch) {
  BranchParams<S> p = make_branch_skeleton<S>(arch, grid, branch);
  p.init_seed = seed;
  Rng rng(mix_seeds(seed, 0x696e6974ULL));  // "init"

  auto fill_uniform = [&rng](Mat<S>& m, double lo, double hi) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c)
        m(r, c) = static_cast<S>(rng.uniform(lo, hi));
  };

  detail::visit_tensors<S>(p, [&](const std::string& name, Mat<S>& m) {
    const bool is_bias = name.size() > 2 && name.compare(name.size() - 2, 2, "_b") == 0;
    const bool is_gain = name.size() > 2 && name.compare(name.size() - 2, 2, "_g") == 0;
    if (is_bias) {
      m.setZero();
    } else if (is_gain) {
      m.setOnes();
    } else if (name == "ssm_decay") {
      fill_uniform(m, -2.0, 0.0);
    } else if (name == "vlad_centers") {
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        VecX v(m.cols());
        for (Eigen::Index c = 0; c < m.cols(); ++c) v(c) = rng.normal();
        v /= std::max(v.norm(), 1e-12);
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = static_cast<S>(v(c));
      }
    } else {
      const double bound = std::sqrt(3.0 / static_cast<double>(m.cols()));
      fill_uniform(m, -bound, bound);
    }
  });
  return p;
}

}  // namespace rlpr::net
