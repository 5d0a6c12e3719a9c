#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "rlpr/bev/polar.hpp"
#include "rlpr/net/layers.hpp"
#include "rlpr/net/params.hpp"

namespace rlpr::net {

// Final descriptors are always double and unit-norm; the normalization is
// the last step of each head. Disabled heads leave their entry empty.
struct Descriptor {
  VecX d_loc;
  VecX d_glob;
  VecX d_full;
};

// Loss gradients with respect to descriptor entries; empty means zero.
struct DescriptorGrad {
  VecX d_loc, d_glob, d_full;
};

// ---------------------------------------------------------------------------
// Traces hold every intermediate needed by the hand-written backward pass.

template <class S>
struct PceTrace {
  Mat<S> tokens;  // (pr*pc, T) patch columns of the normalized grid
  Mat<S> embed;   // (C, T)
  SsmCache<S> ssm_rng, ssm_azi;
  Mat<S> concat;  // (2C, T)
  ConvCache<S> conv1_cache, conv2_cache;
  Mat<S> conv1_out;  // post-relu
  Mat<S> imp_patch;  // (1, T) sigmoid output
};

template <class S>
struct ResBlockTrace {
  ConvCache<S> conv1_cache, conv2_cache;
  Conv1x1Cache<S> skip_cache;
  Mat<S> relu1;
  Mat<S> out;
};

template <class S>
struct AttnLayerTrace {
  Mat<S> x_in;
  Mat<S> q, k, v;
  std::vector<Mat<S>> attn;  // per-head (T, T) softmax rows
  Mat<S> concat;             // pre-output-projection
  LayerNormCache<S> ln1;
  Mat<S> x1;
  Mat<S> ff_relu;  // (T, ff)
  LayerNormCache<S> ln2;
  Mat<S> out;
};

template <class S>
struct VladTrace {
  Mat<S> x;       // (T, d) input tokens
  Mat<S> assign;  // (T, K)
  Vec<S> colsum;  // (K)
  Mat<S> v;       // (K, d)
  Vec<S> vnorm;   // (K), ||row|| + eps
  Mat<S> vhat;    // (K, d)
  Vec<S> z0;      // (K*d)
};

template <class S>
struct Trace {
  GridShape grid;
  NetShapes shapes;
  Mat<S> norm_grid;  // (h, w) normalized input
  PceTrace<S> pce;
  Mat<S> imp_grid;  // (h, w) upsampled importance
  Mat<S> gated;     // (h, w)
  ResBlockTrace<S> rb1, rb2;
  Mat<S> fm;  // (c2, T2)
  // local head
  Vec<S> pooled;
  std::vector<int> pool_argmax;
  // global head
  Mat<S> tokens0;
  std::vector<AttnLayerTrace<S>> attn;
  VladTrace<S> vlad;
  // descriptor assembly (double)
  VecX z_loc, z_glob;
  double norm_loc = 0.0, norm_glob = 0.0;
  Descriptor desc;
};

// ---------------------------------------------------------------------------
// Input normalization: log1p of the counts, then per-grid standardization.
// Raw counts span orders of magnitude between LiDAR and radar; gating happens
// on the normalized grid.

template <class S>
Mat<S> normalize_grid(const MatX& cells) {
  if (!cells.allFinite()) throw std::invalid_argument("net: non-finite BEV input");
  MatX n = cells.array().log1p().matrix();
  const double mu = n.mean();
  const double sd = std::sqrt((n.array() - mu).square().mean());
  MatX out = ((n.array() - mu) / (sd + 1e-8)).matrix();
  return out.cast<S>();
}

namespace detail {

template <class S>
Mat<S> patchify(const Mat<S>& grid, int pr, int pc, int ph, int pw) {
  Mat<S> tokens = Mat<S>::Zero(pr * pc, ph * pw);
  const int h = static_cast<int>(grid.rows()), w = static_cast<int>(grid.cols());
  for (int i = 0; i < ph; ++i)
    for (int j = 0; j < pw; ++j) {
      const int t = i * pw + j;
      for (int rr = 0; rr < pr; ++rr) {
        const int r = i * pr + rr;
        if (r >= h) break;
        for (int cc = 0; cc < pc; ++cc) {
          const int c = j * pc + cc;
          if (c >= w) break;
          tokens(rr * pc + cc, t) = grid(r, c);
        }
      }
    }
  return tokens;
}

// Azimuth-major sequence order: position q = j*H + i maps to patch t = i*W + j.
inline int azi_to_rowmajor(int q, int ph, int pw) {
  const int i = q % ph, j = q / ph;
  return i * pw + j;
}

template <class S>
void pce_forward_impl(const BranchParams<S>& p, Trace<S>& tr) {
  const auto& arch = p.arch;
  const int ph = tr.shapes.patch_h, pw = tr.shapes.patch_w;
  const int t_count = ph * pw;

  tr.pce.tokens = patchify(tr.norm_grid, arch.patch_rows, arch.patch_cols, ph, pw);
  tr.pce.embed = p.pce_embed_w * tr.pce.tokens;
  tr.pce.embed.colwise() += p.pce_embed_b.col(0);

  // Two-way scan with one shared SSM: row-major and column-major traversals.
  Mat<S> y_rng = ssm_forward(tr.pce.embed, p.ssm_conv_k, p.ssm_decay, p.ssm_in_b, p.ssm_out_c,
                             p.ssm_skip_d, &tr.pce.ssm_rng);
  Mat<S> seq_azi(tr.pce.embed.rows(), t_count);
  for (int q = 0; q < t_count; ++q) seq_azi.col(q) = tr.pce.embed.col(azi_to_rowmajor(q, ph, pw));
  Mat<S> y_azi_q = ssm_forward(seq_azi, p.ssm_conv_k, p.ssm_decay, p.ssm_in_b, p.ssm_out_c,
                               p.ssm_skip_d, &tr.pce.ssm_azi);

  tr.pce.concat.resize(2 * arch.embed_dim, t_count);
  tr.pce.concat.topRows(arch.embed_dim) = y_rng;
  for (int q = 0; q < t_count; ++q)
    tr.pce.concat.col(azi_to_rowmajor(q, ph, pw)).tail(arch.embed_dim) = y_azi_q.col(q);

  Mat<S> c1 = conv3x3_forward(tr.pce.concat, p.pce_conv1_w, p.pce_conv1_b, ph, pw, 1,
                              &tr.pce.conv1_cache);
  tr.pce.conv1_out = relu(c1);
  Mat<S> logits = conv3x3_forward(tr.pce.conv1_out, p.pce_conv2_w, p.pce_conv2_b, ph, pw, 1,
                                  &tr.pce.conv2_cache);
  tr.pce.imp_patch = sigmoid(logits);

  // Nearest upsample back to grid resolution, cropping the padding.
  const int h = tr.grid.rows, w = tr.grid.cols;
  tr.imp_grid.resize(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      tr.imp_grid(r, c) =
          tr.pce.imp_patch(0, (r / arch.patch_rows) * pw + (c / arch.patch_cols));
  tr.gated = (tr.norm_grid.array() * tr.imp_grid.array()).matrix();
}

template <class S>
void pce_backward_impl(const Mat<S>& d_gated, const BranchParams<S>& p, const Trace<S>& tr,
                       BranchParams<S>& g) {
  const auto& arch = p.arch;
  const int ph = tr.shapes.patch_h, pw = tr.shapes.patch_w;
  const int t_count = ph * pw;
  const int h = tr.grid.rows, w = tr.grid.cols;

  Mat<S> d_imp_grid = (d_gated.array() * tr.norm_grid.array()).matrix();
  Mat<S> d_imp_patch = Mat<S>::Zero(1, t_count);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      d_imp_patch(0, (r / arch.patch_rows) * pw + (c / arch.patch_cols)) += d_imp_grid(r, c);

  Mat<S> d_logits = sigmoid_backward(d_imp_patch, tr.pce.imp_patch);
  Mat<S> d_c1 = Mat<S>::Zero(arch.pce_hidden, t_count);
  conv3x3_backward(d_logits, p.pce_conv2_w, tr.pce.conv2_cache, g.pce_conv2_w, g.pce_conv2_b,
                   &d_c1);
  Mat<S> d_c1_pre = relu_backward(d_c1, tr.pce.conv1_out);
  Mat<S> d_concat = Mat<S>::Zero(2 * arch.embed_dim, t_count);
  conv3x3_backward(d_c1_pre, p.pce_conv1_w, tr.pce.conv1_cache, g.pce_conv1_w, g.pce_conv1_b,
                   &d_concat);

  Mat<S> d_yrng = d_concat.topRows(arch.embed_dim);
  Mat<S> d_yazi_q(arch.embed_dim, t_count);
  for (int q = 0; q < t_count; ++q)
    d_yazi_q.col(q) = d_concat.col(azi_to_rowmajor(q, ph, pw)).tail(arch.embed_dim);

  Mat<S> d_embed = ssm_backward(d_yrng, p.ssm_conv_k, p.ssm_decay, p.ssm_in_b, p.ssm_out_c,
                                p.ssm_skip_d, tr.pce.ssm_rng, g.ssm_conv_k, g.ssm_decay,
                                g.ssm_in_b, g.ssm_out_c, g.ssm_skip_d);
  Mat<S> d_seq_azi = ssm_backward(d_yazi_q, p.ssm_conv_k, p.ssm_decay, p.ssm_in_b, p.ssm_out_c,
                                  p.ssm_skip_d, tr.pce.ssm_azi, g.ssm_conv_k, g.ssm_decay,
                                  g.ssm_in_b, g.ssm_out_c, g.ssm_skip_d);
  for (int q = 0; q < t_count; ++q)
    d_embed.col(azi_to_rowmajor(q, ph, pw)) += d_seq_azi.col(q);

  g.pce_embed_w.noalias() += d_embed * tr.pce.tokens.transpose();
  g.pce_embed_b.col(0).noalias() += d_embed.rowwise().sum();
}

template <class S>
Mat<S> resblock_forward(const Mat<S>& x, int h, int w, const Mat<S>& w1, const Mat<S>& b1,
                        const Mat<S>& w2, const Mat<S>& b2, const Mat<S>& wsk, const Mat<S>& bsk,
                        ResBlockTrace<S>& tr) {
  Mat<S> y1 = conv3x3_forward(x, w1, b1, h, w, 2, &tr.conv1_cache);
  tr.relu1 = relu(y1);
  Mat<S> y2 = conv3x3_forward(tr.relu1, w2, b2, tr.conv1_cache.hout, tr.conv1_cache.wout, 1,
                              &tr.conv2_cache);
  Mat<S> sk = conv1x1_forward(x, wsk, bsk, h, w, 2, &tr.skip_cache);
  tr.out = relu((y2 + sk).eval());
  return tr.out;
}

template <class S>
void resblock_backward(const Mat<S>& d_out, const Mat<S>& w1, const Mat<S>& w2, const Mat<S>& wsk,
                       const ResBlockTrace<S>& tr, Mat<S>& g_w1, Mat<S>& g_b1, Mat<S>& g_w2,
                       Mat<S>& g_b2, Mat<S>& g_wsk, Mat<S>& g_bsk, Mat<S>* dx) {
  Mat<S> d_sum = relu_backward(d_out, tr.out);
  conv1x1_backward(d_sum, wsk, tr.skip_cache, g_wsk, g_bsk, dx);
  Mat<S> d_r1 = Mat<S>::Zero(tr.relu1.rows(), tr.relu1.cols());
  conv3x3_backward(d_sum, w2, tr.conv2_cache, g_w2, g_b2, &d_r1);
  Mat<S> d_y1 = relu_backward(d_r1, tr.relu1);
  conv3x3_backward(d_y1, w1, tr.conv1_cache, g_w1, g_b1, dx);
}

template <class S>
Mat<S> positional_encoding(int t, int d) {
  Mat<S> pe(t, d);
  for (int i = 0; i < d; ++i) {
    const double inv_freq = std::exp(-std::log(10000.0) * (2.0 * (i / 2)) / d);
    for (int pos = 0; pos < t; ++pos) {
      const double angle = pos * inv_freq;
      pe(pos, i) = static_cast<S>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return pe;
}

template <class S>
Mat<S> attn_layer_forward(const Mat<S>& x, const AttnLayerParams<S>& lp, int heads,
                          AttnLayerTrace<S>& tr) {
  const int t = static_cast<int>(x.rows());
  const int d = static_cast<int>(x.cols());
  const int dh = d / heads;
  const S inv_sqrt = S(1) / std::sqrt(static_cast<S>(dh));

  tr.x_in = x;
  tr.q = x * lp.wq.transpose();
  tr.q.rowwise() += lp.bq.col(0).transpose();
  tr.k = x * lp.wk.transpose();
  tr.k.rowwise() += lp.bk.col(0).transpose();
  tr.v = x * lp.wv.transpose();
  tr.v.rowwise() += lp.bv.col(0).transpose();

  tr.attn.resize(heads);
  tr.concat.resize(t, d);
  for (int hh = 0; hh < heads; ++hh) {
    auto qh = tr.q.middleCols(hh * dh, dh);
    auto kh = tr.k.middleCols(hh * dh, dh);
    auto vh = tr.v.middleCols(hh * dh, dh);
    Mat<S> scores = (qh * kh.transpose()) * inv_sqrt;
    tr.attn[hh] = softmax_rows(scores);
    tr.concat.middleCols(hh * dh, dh).noalias() = tr.attn[hh] * vh;
  }

  Mat<S> z = tr.concat * lp.wo.transpose();
  z.rowwise() += lp.bo.col(0).transpose();
  tr.x1 = layernorm_rows((x + z).eval(), lp.ln1_g, lp.ln1_b, &tr.ln1);

  Mat<S> f1 = tr.x1 * lp.ff1_w.transpose();
  f1.rowwise() += lp.ff1_b.col(0).transpose();
  tr.ff_relu = relu(f1);
  Mat<S> f2 = tr.ff_relu * lp.ff2_w.transpose();
  f2.rowwise() += lp.ff2_b.col(0).transpose();
  tr.out = layernorm_rows((tr.x1 + f2).eval(), lp.ln2_g, lp.ln2_b, &tr.ln2);
  return tr.out;
}

template <class S>
Mat<S> attn_layer_backward(const Mat<S>& d_out, const AttnLayerParams<S>& lp,
                           AttnLayerParams<S>& g, int heads, const AttnLayerTrace<S>& tr) {
  const int d = static_cast<int>(tr.x_in.cols());
  const int dh = d / heads;
  const S inv_sqrt = S(1) / std::sqrt(static_cast<S>(dh));

  Mat<S> d_res2 = layernorm_rows_backward(d_out, lp.ln2_g, tr.ln2, g.ln2_g, g.ln2_b);
  // d_res2 splits into the x1 shortcut and the feedforward path.
  Mat<S> d_x1 = d_res2;
  g.ff2_w.noalias() += d_res2.transpose() * tr.ff_relu;
  g.ff2_b.col(0).noalias() += d_res2.colwise().sum().transpose();
  Mat<S> d_f1 = relu_backward((d_res2 * lp.ff2_w).eval(), tr.ff_relu);
  g.ff1_w.noalias() += d_f1.transpose() * tr.x1;
  g.ff1_b.col(0).noalias() += d_f1.colwise().sum().transpose();
  d_x1.noalias() += d_f1 * lp.ff1_w;

  Mat<S> d_res1 = layernorm_rows_backward(d_x1, lp.ln1_g, tr.ln1, g.ln1_g, g.ln1_b);
  Mat<S> d_x = d_res1;  // shortcut branch
  g.wo.noalias() += d_res1.transpose() * tr.concat;
  g.bo.col(0).noalias() += d_res1.colwise().sum().transpose();
  Mat<S> d_concat = d_res1 * lp.wo;

  Mat<S> d_q(tr.q.rows(), d), d_k(tr.q.rows(), d), d_v(tr.q.rows(), d);
  for (int hh = 0; hh < heads; ++hh) {
    auto qh = tr.q.middleCols(hh * dh, dh);
    auto kh = tr.k.middleCols(hh * dh, dh);
    auto vh = tr.v.middleCols(hh * dh, dh);
    auto d_oh = d_concat.middleCols(hh * dh, dh);
    Mat<S> d_attn = d_oh * vh.transpose();
    d_v.middleCols(hh * dh, dh).noalias() = tr.attn[hh].transpose() * d_oh;
    Mat<S> d_scores = softmax_rows_backward(d_attn, tr.attn[hh]);
    d_q.middleCols(hh * dh, dh).noalias() = (d_scores * kh) * inv_sqrt;
    d_k.middleCols(hh * dh, dh).noalias() = (d_scores.transpose() * qh) * inv_sqrt;
  }

  g.wq.noalias() += d_q.transpose() * tr.x_in;
  g.bq.col(0).noalias() += d_q.colwise().sum().transpose();
  g.wk.noalias() += d_k.transpose() * tr.x_in;
  g.bk.col(0).noalias() += d_k.colwise().sum().transpose();
  g.wv.noalias() += d_v.transpose() * tr.x_in;
  g.bv.col(0).noalias() += d_v.colwise().sum().transpose();
  d_x.noalias() += d_q * lp.wq;
  d_x.noalias() += d_k * lp.wk;
  d_x.noalias() += d_v * lp.wv;
  return d_x;
}

template <class S>
void vlad_forward(const Mat<S>& x, const BranchParams<S>& p, VladTrace<S>& tr) {
  const int k = p.arch.vlad_clusters;
  const int d = p.arch.attn_dim;
  tr.x = x;
  Mat<S> logits = x * p.vlad_assign_w.transpose();
  logits.rowwise() += p.vlad_assign_b.col(0).transpose();
  tr.assign = softmax_rows(logits);
  tr.colsum = tr.assign.colwise().sum().transpose();
  tr.v = tr.assign.transpose() * x;
  tr.v.noalias() -= tr.colsum.asDiagonal() * p.vlad_centers;

  tr.vnorm.resize(k);
  tr.vhat.resize(k, d);
  tr.z0.resize(k * d);
  for (int kk = 0; kk < k; ++kk) {
    tr.vnorm(kk) = tr.v.row(kk).norm() + S(1e-12);
    tr.vhat.row(kk) = tr.v.row(kk) / tr.vnorm(kk);
    tr.z0.segment(kk * d, d) = tr.vhat.row(kk).transpose();
  }
}

template <class S>
Mat<S> vlad_backward(const Vec<S>& d_z0, const BranchParams<S>& p, BranchParams<S>& g,
                     const VladTrace<S>& tr) {
  const int k = p.arch.vlad_clusters;
  const int d = p.arch.attn_dim;

  Mat<S> d_v(k, d);
  for (int kk = 0; kk < k; ++kk) {
    auto d_vhat = d_z0.segment(kk * d, d).transpose();
    const S n = tr.vnorm(kk);
    const S raw = n - S(1e-12);
    d_v.row(kk) = d_vhat / n;
    if (raw > S(0)) {
      const S dot = tr.v.row(kk).dot(d_vhat);
      d_v.row(kk).noalias() -= tr.v.row(kk) * (dot / (raw * n * n));
    }
  }

  g.vlad_centers.noalias() -= tr.colsum.asDiagonal() * d_v;
  Mat<S> d_assign = tr.x * d_v.transpose();
  d_assign.rowwise() -= (d_v.array() * p.vlad_centers.array()).rowwise().sum().matrix().transpose();
  Mat<S> d_x = tr.assign * d_v;

  Mat<S> d_logits = softmax_rows_backward(d_assign, tr.assign);
  g.vlad_assign_w.noalias() += d_logits.transpose() * tr.x;
  g.vlad_assign_b.col(0).noalias() += d_logits.colwise().sum().transpose();
  d_x.noalias() += d_logits * p.vlad_assign_w;
  return d_x;
}

inline VecX normalize_unit(const VecX& z, double& norm_out) {
  norm_out = std::max(z.norm(), 1e-12);
  return z / norm_out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Forward to the feature map (PCE gate + ResBlock backbone).

template <class S>
Mat<S> forward_features_traced(const bev::PolarBEV& bev, const BranchParams<S>& p, Trace<S>& tr) {
  const GridShape grid{static_cast<int>(bev.cells.rows()), static_cast<int>(bev.cells.cols())};
  if (!(grid == p.grid))
    throw std::invalid_argument("net: BEV dims do not match the parameter grid binding");
  tr.grid = grid;
  tr.shapes = derive_shapes(p.arch, grid);
  tr.norm_grid = normalize_grid<S>(bev.cells);

  if (p.arch.use_pce) {
    detail::pce_forward_impl(p, tr);
  } else {
    tr.gated = tr.norm_grid;
  }

  // Backbone consumes the gated grid as a single-channel map.
  Mat<S> x0(1, grid.rows * grid.cols);
  for (int r = 0; r < grid.rows; ++r)
    for (int c = 0; c < grid.cols; ++c) x0(0, r * grid.cols + c) = tr.gated(r, c);

  Mat<S> out1 = detail::resblock_forward(x0, grid.rows, grid.cols, p.rb1_conv1_w, p.rb1_conv1_b,
                                         p.rb1_conv2_w, p.rb1_conv2_b, p.rb1_skip_w, p.rb1_skip_b,
                                         tr.rb1);
  tr.fm = detail::resblock_forward(out1, tr.rb1.conv1_cache.hout, tr.rb1.conv1_cache.wout,
                                   p.rb2_conv1_w, p.rb2_conv1_b, p.rb2_conv2_w, p.rb2_conv2_b,
                                   p.rb2_skip_w, p.rb2_skip_b, tr.rb2);
  return tr.fm;
}

// FeatureMap as (C', H'*W'); used directly by the entropy analysis.
template <class S>
Mat<S> forward_features(const bev::PolarBEV& bev, const BranchParams<S>& p) {
  Trace<S> tr;
  return forward_features_traced(bev, p, tr);
}

// PCE gate alone: (gated grid, importance map at grid resolution).
template <class S>
struct PceResult {
  Mat<S> gated;
  Mat<S> importance;
};

template <class S>
PceResult<S> pce_forward(const bev::PolarBEV& bev, const BranchParams<S>& p) {
  const GridShape grid{static_cast<int>(bev.cells.rows()), static_cast<int>(bev.cells.cols())};
  if (!(grid == p.grid))
    throw std::invalid_argument("net: BEV dims do not match the parameter grid binding");
  Trace<S> tr;
  tr.grid = grid;
  tr.shapes = derive_shapes(p.arch, grid);
  tr.norm_grid = normalize_grid<S>(bev.cells);
  detail::pce_forward_impl(p, tr);
  return {std::move(tr.gated), std::move(tr.imp_grid)};
}

// ---------------------------------------------------------------------------
// Descriptor heads on a feature map.

template <class S>
VecX local_descriptor_traced(const Mat<S>& fm, const BranchParams<S>& p, Trace<S>& tr) {
  const int t_count = static_cast<int>(fm.cols());
  tr.pooled.resize(t_count);
  if (p.arch.pool == Pool::cap) {
    tr.pooled = fm.colwise().mean().transpose();
  } else {
    tr.pool_argmax.assign(t_count, 0);
    for (int t = 0; t < t_count; ++t) {
      int best = 0;
      for (int c = 1; c < fm.rows(); ++c)
        if (fm(c, t) > fm(best, t)) best = c;  // first maximizer wins ties
      tr.pool_argmax[t] = best;
      tr.pooled(t) = fm(best, t);
    }
  }
  Vec<S> z = p.loc_w * tr.pooled + p.loc_b.col(0);
  tr.z_loc = z.template cast<double>();
  return detail::normalize_unit(tr.z_loc, tr.norm_loc);
}

template <class S>
VecX global_descriptor_traced(const Mat<S>& fm, const BranchParams<S>& p, Trace<S>& tr) {
  tr.tokens0 = fm.transpose();
  if (p.arch.positional_encoding)
    tr.tokens0 += detail::positional_encoding<S>(static_cast<int>(tr.tokens0.rows()),
                                                 p.arch.attn_dim);
  Mat<S> x = tr.tokens0;
  tr.attn.resize(p.attn.size());
  for (std::size_t l = 0; l < p.attn.size(); ++l)
    x = detail::attn_layer_forward(x, p.attn[l], p.arch.attn_heads, tr.attn[l]);
  detail::vlad_forward(x, p, tr.vlad);
  Vec<S> z = p.glob_w * tr.vlad.z0 + p.glob_b.col(0);
  tr.z_glob = z.template cast<double>();
  return detail::normalize_unit(tr.z_glob, tr.norm_glob);
}

// Convenience non-traced head wrappers.
template <class S>
VecX local_descriptor(const Mat<S>& fm, const BranchParams<S>& p) {
  Trace<S> tr;
  return local_descriptor_traced(fm, p, tr);
}

template <class S>
VecX global_descriptor(const Mat<S>& fm, const BranchParams<S>& p) {
  Trace<S> tr;
  return global_descriptor_traced(fm, p, tr);
}

// ---------------------------------------------------------------------------
// Full forward: PCE -> backbone -> heads -> concatenated unit descriptor.

template <class S>
Descriptor forward(const bev::PolarBEV& bev, const BranchParams<S>& p, Trace<S>& tr) {
  forward_features_traced(bev, p, tr);
  Descriptor& d = tr.desc;
  if (p.arch.use_local_head) d.d_loc = local_descriptor_traced(tr.fm, p, tr);
  if (p.arch.use_global_head) d.d_glob = global_descriptor_traced(tr.fm, p, tr);
  if (p.arch.use_local_head && p.arch.use_global_head) {
    d.d_full.resize(d.d_loc.size() + d.d_glob.size());
    d.d_full << d.d_loc, d.d_glob;
    d.d_full /= std::sqrt(2.0);
  } else {
    d.d_full = p.arch.use_local_head ? d.d_loc : d.d_glob;
  }
  return d;
}

template <class S>
Descriptor forward(const bev::PolarBEV& bev, const BranchParams<S>& p) {
  Trace<S> tr;
  return forward(bev, p, tr);
}

// ---------------------------------------------------------------------------
// Reverse pass. Descriptor-level loss gradients (double) are pulled through
// the unit normalization, cast to S, and backpropagated into `grads`, which
// must be a zeros_like sibling of `p` (accumulation is +=).

template <class S>
void backward(const BranchParams<S>& p, const Trace<S>& tr, const DescriptorGrad& dg,
              BranchParams<S>& grads) {
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  const bool both = p.arch.use_local_head && p.arch.use_global_head;
  const Eigen::Index dim = p.arch.descriptor_dim;

  Mat<S> d_fm = Mat<S>::Zero(tr.fm.rows(), tr.fm.cols());

  if (p.arch.use_local_head) {
    VecX dy = VecX::Zero(dim);
    if (dg.d_loc.size()) dy += dg.d_loc;
    if (dg.d_full.size()) dy += both ? (dg.d_full.head(dim) * inv_sqrt2).eval()
                                     : dg.d_full;
    const VecX& y = tr.desc.d_loc;
    VecX dz = (dy - y * y.dot(dy)) / tr.norm_loc;
    Vec<S> dz_s = dz.cast<S>();
    grads.loc_w.noalias() += dz_s * tr.pooled.transpose();
    grads.loc_b.col(0).noalias() += dz_s;
    Vec<S> d_pooled = p.loc_w.transpose() * dz_s;
    if (p.arch.pool == Pool::cap) {
      d_fm.array().rowwise() +=
          (d_pooled / static_cast<S>(tr.fm.rows())).transpose().array();
    } else {
      for (int t = 0; t < d_pooled.size(); ++t) d_fm(tr.pool_argmax[t], t) += d_pooled(t);
    }
  }

  if (p.arch.use_global_head) {
    VecX dy = VecX::Zero(dim);
    if (dg.d_glob.size()) dy += dg.d_glob;
    if (dg.d_full.size()) dy += both ? (dg.d_full.tail(dim) * inv_sqrt2).eval()
                                     : dg.d_full;
    const VecX& y = tr.desc.d_glob;
    VecX dz = (dy - y * y.dot(dy)) / tr.norm_glob;
    Vec<S> dz_s = dz.cast<S>();
    grads.glob_w.noalias() += dz_s * tr.vlad.z0.transpose();
    grads.glob_b.col(0).noalias() += dz_s;
    Vec<S> d_z0 = p.glob_w.transpose() * dz_s;
    Mat<S> d_tok = detail::vlad_backward(d_z0, p, grads, tr.vlad);
    for (int l = static_cast<int>(p.attn.size()) - 1; l >= 0; --l)
      d_tok = detail::attn_layer_backward(d_tok, p.attn[l], grads.attn[l], p.arch.attn_heads,
                                          tr.attn[l]);
    d_fm.noalias() += d_tok.transpose();
  }

  // Backbone.
  Mat<S> d_out1 = Mat<S>::Zero(tr.rb1.out.rows(), tr.rb1.out.cols());
  detail::resblock_backward(d_fm, p.rb2_conv1_w, p.rb2_conv2_w, p.rb2_skip_w, tr.rb2,
                            grads.rb2_conv1_w, grads.rb2_conv1_b, grads.rb2_conv2_w,
                            grads.rb2_conv2_b, grads.rb2_skip_w, grads.rb2_skip_b, &d_out1);
  Mat<S> d_x0 = Mat<S>::Zero(1, tr.grid.rows * tr.grid.cols);
  detail::resblock_backward(d_out1, p.rb1_conv1_w, p.rb1_conv2_w, p.rb1_skip_w, tr.rb1,
                            grads.rb1_conv1_w, grads.rb1_conv1_b, grads.rb1_conv2_w,
                            grads.rb1_conv2_b, grads.rb1_skip_w, grads.rb1_skip_b, &d_x0);

  if (p.arch.use_pce) {
    Mat<S> d_gated(tr.grid.rows, tr.grid.cols);
    for (int r = 0; r < tr.grid.rows; ++r)
      for (int c = 0; c < tr.grid.cols; ++c) d_gated(r, c) = d_x0(0, r * tr.grid.cols + c);
    detail::pce_backward_impl(d_gated, p, tr, grads);
  }
}

}  // namespace rlpr::net
