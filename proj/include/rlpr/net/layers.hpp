#pragma once

#include <cmath>
#include <vector>

#include "rlpr/core/types.hpp"

// Low-level kernels shared by both branches. Spatial maps are (C, H*W)
// matrices with row-major pixel index p = r*W + c; token matrices are (T, d)
// with one row per token. Everything is templated on the scalar: float in
// the training pipeline, double in the finite-difference suite.
namespace rlpr::net {

template <class S>
S softplus(S x) {
  if (x > S(20)) return x;
  return std::log1p(std::exp(x));
}

template <class S>
S sigmoid_scalar(S x) {
  return S(1) / (S(1) + std::exp(-x));
}

// ---------------------------------------------------------------------------
// 3x3 convolution, zero padding 1, stride 1 or 2. Weight layout: (Cout,
// 9*Cin) with column index k*Cin + ci, where k = (dr+1)*3 + (dc+1).

inline int conv_out_dim(int in, int stride) { return (in - 1) / stride + 1; }

template <class S>
struct ConvCache {
  Mat<S> cols;  // (9*Cin, Hout*Wout)
  int hin = 0, win = 0, hout = 0, wout = 0, stride = 1;
};

template <class S>
Mat<S> im2col3(const Mat<S>& x, int h, int w, int stride) {
  const int cin = static_cast<int>(x.rows());
  const int hout = conv_out_dim(h, stride);
  const int wout = conv_out_dim(w, stride);
  Mat<S> cols = Mat<S>::Zero(9 * cin, hout * wout);
  for (int ro = 0; ro < hout; ++ro) {
    for (int dr = -1; dr <= 1; ++dr) {
      const int ri = ro * stride + dr;
      if (ri < 0 || ri >= h) continue;
      for (int co = 0; co < wout; ++co) {
        const int oidx = ro * wout + co;
        for (int dc = -1; dc <= 1; ++dc) {
          const int ci = co * stride + dc;
          if (ci < 0 || ci >= w) continue;
          const int k = (dr + 1) * 3 + (dc + 1);
          cols.col(oidx).segment(k * cin, cin) = x.col(ri * w + ci);
        }
      }
    }
  }
  return cols;
}

template <class S>
Mat<S> conv3x3_forward(const Mat<S>& x, const Mat<S>& weight, const Mat<S>& bias, int h, int w,
                       int stride, ConvCache<S>* cache) {
  Mat<S> cols = im2col3(x, h, w, stride);
  Mat<S> y = weight * cols;
  y.colwise() += bias.col(0);
  if (cache) {
    cache->cols = std::move(cols);
    cache->hin = h;
    cache->win = w;
    cache->hout = conv_out_dim(h, stride);
    cache->wout = conv_out_dim(w, stride);
    cache->stride = stride;
  }
  return y;
}

// dx is optional: the first convolution of a block feeding on raw input
// skips it.
template <class S>
void conv3x3_backward(const Mat<S>& dy, const Mat<S>& weight, const ConvCache<S>& cache,
                      Mat<S>& dweight, Mat<S>& dbias, Mat<S>* dx) {
  dweight.noalias() += dy * cache.cols.transpose();
  dbias.col(0).noalias() += dy.rowwise().sum();
  if (!dx) return;
  const int cin = static_cast<int>(dx->rows());
  Mat<S> dcols = weight.transpose() * dy;  // (9*Cin, Hout*Wout)
  for (int ro = 0; ro < cache.hout; ++ro) {
    for (int dr = -1; dr <= 1; ++dr) {
      const int ri = ro * cache.stride + dr;
      if (ri < 0 || ri >= cache.hin) continue;
      for (int co = 0; co < cache.wout; ++co) {
        const int oidx = ro * cache.wout + co;
        for (int dc = -1; dc <= 1; ++dc) {
          const int ci = co * cache.stride + dc;
          if (ci < 0 || ci >= cache.win) continue;
          const int k = (dr + 1) * 3 + (dc + 1);
          dx->col(ri * cache.win + ci) += dcols.col(oidx).segment(k * cin, cin);
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// 1x1 convolution with stride (the ResBlock projection shortcut).

template <class S>
struct Conv1x1Cache {
  Mat<S> gathered;  // (Cin, Hout*Wout)
  int hin = 0, win = 0, hout = 0, wout = 0, stride = 1;
};

template <class S>
Mat<S> conv1x1_forward(const Mat<S>& x, const Mat<S>& weight, const Mat<S>& bias, int h, int w,
                       int stride, Conv1x1Cache<S>* cache) {
  const int hout = conv_out_dim(h, stride);
  const int wout = conv_out_dim(w, stride);
  Mat<S> gathered(x.rows(), hout * wout);
  for (int ro = 0; ro < hout; ++ro)
    for (int co = 0; co < wout; ++co)
      gathered.col(ro * wout + co) = x.col(ro * stride * w + co * stride);
  Mat<S> y = weight * gathered;
  y.colwise() += bias.col(0);
  if (cache) {
    cache->gathered = std::move(gathered);
    cache->hin = h;
    cache->win = w;
    cache->hout = hout;
    cache->wout = wout;
    cache->stride = stride;
  }
  return y;
}

template <class S>
void conv1x1_backward(const Mat<S>& dy, const Mat<S>& weight, const Conv1x1Cache<S>& cache,
                      Mat<S>& dweight, Mat<S>& dbias, Mat<S>* dx) {
  dweight.noalias() += dy * cache.gathered.transpose();
  dbias.col(0).noalias() += dy.rowwise().sum();
  if (!dx) return;
  Mat<S> dg = weight.transpose() * dy;
  for (int ro = 0; ro < cache.hout; ++ro)
    for (int co = 0; co < cache.wout; ++co)
      dx->col(ro * cache.stride * cache.win + co * cache.stride) += dg.col(ro * cache.wout + co);
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities. Backward takes the forward *output*.

template <class S>
Mat<S> relu(const Mat<S>& x) {
  return x.cwiseMax(S(0));
}

template <class S>
Mat<S> relu_backward(const Mat<S>& dy, const Mat<S>& y) {
  return ((y.array() > S(0)).template cast<S>() * dy.array()).matrix();
}

template <class S>
Mat<S> sigmoid(const Mat<S>& x) {
  return x.unaryExpr([](S v) { return sigmoid_scalar(v); });
}

template <class S>
Mat<S> sigmoid_backward(const Mat<S>& dy, const Mat<S>& y) {
  return (dy.array() * y.array() * (S(1) - y.array())).matrix();
}

// ---------------------------------------------------------------------------
// Row-wise softmax with max subtraction.

template <class S>
Mat<S> softmax_rows(const Mat<S>& x) {
  const Vec<S> rowmax = x.rowwise().maxCoeff();
  Mat<S> y = ((x.colwise() - rowmax).array().exp()).matrix();
  const Vec<S> sums = y.rowwise().sum();
  y.array().colwise() /= sums.array();
  return y;
}

template <class S>
Mat<S> softmax_rows_backward(const Mat<S>& dy, const Mat<S>& y) {
  const Vec<S> dots = (dy.array() * y.array()).rowwise().sum();
  return (y.array() * (dy.colwise() - dots).array()).matrix();
}

// ---------------------------------------------------------------------------
// LayerNorm over the feature axis of a (T, d) token matrix.

template <class S>
struct LayerNormCache {
  Mat<S> xhat;       // (T, d)
  Vec<S> inv_sigma;  // (T)
};

template <class S>
Mat<S> layernorm_rows(const Mat<S>& x, const Mat<S>& gain, const Mat<S>& beta,
                      LayerNormCache<S>* cache) {
  constexpr S eps = S(1e-5);
  const Vec<S> mu = x.rowwise().mean();
  Mat<S> xhat = x.colwise() - mu;
  const Vec<S> inv_sigma =
      (xhat.array().square().rowwise().mean() + eps).sqrt().inverse().matrix();
  xhat.array().colwise() *= inv_sigma.array();
  Mat<S> y = (xhat.array().rowwise() * gain.col(0).transpose().array()).matrix();
  y.array().rowwise() += beta.col(0).transpose().array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_sigma = inv_sigma;
  }
  return y;
}

template <class S>
Mat<S> layernorm_rows_backward(const Mat<S>& dy, const Mat<S>& gain, const LayerNormCache<S>& cache,
                               Mat<S>& dgain, Mat<S>& dbeta) {
  dgain.col(0).noalias() += (dy.array() * cache.xhat.array()).colwise().sum().matrix().transpose();
  dbeta.col(0).noalias() += dy.colwise().sum().transpose();
  const Mat<S> dyg = (dy.array().rowwise() * gain.col(0).transpose().array()).matrix();
  const Vec<S> m1 = dyg.rowwise().mean();
  const Vec<S> m2 = (dyg.array() * cache.xhat.array()).rowwise().mean();
  Mat<S> dx = ((dyg.colwise() - m1).array() -
               cache.xhat.array().colwise() * m2.array())
                  .matrix();
  dx.array().colwise() *= cache.inv_sigma.array();
  return dx;
}

// ---------------------------------------------------------------------------
// Simplified diagonal SSM over a (C, T) sequence: a width-3 non-causal
// depthwise convolution stands in for a backward scan, then the per-channel
// recurrence h_t = a h_{t-1} + b x_t, y_t = c h_t + d x_t with
// a = exp(-softplus(decay)) in (0, 1).

template <class S>
struct SsmCache {
  Mat<S> x;      // raw input (C, T)
  Mat<S> xconv;  // after depthwise conv
  Mat<S> h;      // hidden states
};

template <class S>
Mat<S> ssm_forward(const Mat<S>& x, const Mat<S>& conv_k, const Mat<S>& decay, const Mat<S>& in_b,
                   const Mat<S>& out_c, const Mat<S>& skip_d, SsmCache<S>* cache) {
  const Eigen::Index c = x.rows(), t = x.cols();
  Vec<S> a(c);
  for (Eigen::Index i = 0; i < c; ++i) a(i) = std::exp(-softplus(decay(i, 0)));

  Mat<S> xconv(c, t);
  for (Eigen::Index j = 0; j < t; ++j) {
    xconv.col(j) = (conv_k.col(1).array() * x.col(j).array()).matrix();
    if (j > 0) xconv.col(j).array() += conv_k.col(0).array() * x.col(j - 1).array();
    if (j + 1 < t) xconv.col(j).array() += conv_k.col(2).array() * x.col(j + 1).array();
  }

  Mat<S> h(c, t);
  h.col(0) = (in_b.col(0).array() * xconv.col(0).array()).matrix();
  for (Eigen::Index j = 1; j < t; ++j)
    h.col(j) =
        (a.array() * h.col(j - 1).array() + in_b.col(0).array() * xconv.col(j).array()).matrix();

  Mat<S> y = (h.array().colwise() * out_c.col(0).array()).matrix();
  y.array() += xconv.array().colwise() * skip_d.col(0).array();
  if (cache) {
    cache->x = x;
    cache->xconv = std::move(xconv);
    cache->h = std::move(h);
  }
  return y;
}

template <class S>
Mat<S> ssm_backward(const Mat<S>& dy, const Mat<S>& conv_k, const Mat<S>& decay,
                    const Mat<S>& in_b, const Mat<S>& out_c, const Mat<S>& skip_d,
                    const SsmCache<S>& cache, Mat<S>& dconv_k, Mat<S>& ddecay, Mat<S>& din_b,
                    Mat<S>& dout_c, Mat<S>& dskip_d) {
  const Eigen::Index c = dy.rows(), t = dy.cols();
  Vec<S> a(c), dsig(c);
  for (Eigen::Index i = 0; i < c; ++i) {
    a(i) = std::exp(-softplus(decay(i, 0)));
    dsig(i) = sigmoid_scalar(decay(i, 0));  // d softplus / d decay
  }

  dout_c.col(0).noalias() += (dy.array() * cache.h.array()).rowwise().sum().matrix();
  dskip_d.col(0).noalias() += (dy.array() * cache.xconv.array()).rowwise().sum().matrix();

  Mat<S> dxconv = (dy.array().colwise() * skip_d.col(0).array()).matrix();
  Vec<S> dh = Vec<S>::Zero(c);
  Vec<S> da_acc = Vec<S>::Zero(c);
  for (Eigen::Index j = t - 1; j >= 0; --j) {
    dh.array() += dy.col(j).array() * out_c.col(0).array();
    if (j > 0) da_acc.array() += dh.array() * cache.h.col(j - 1).array();
    din_b.col(0).array() += dh.array() * cache.xconv.col(j).array();
    dxconv.col(j).array() += dh.array() * in_b.col(0).array();
    dh.array() *= a.array();
  }
  // a = exp(-softplus(decay)) => da/ddecay = -a * sigmoid(decay)
  ddecay.col(0).array() += da_acc.array() * (-a.array() * dsig.array());

  Mat<S> dx = Mat<S>::Zero(c, t);
  for (Eigen::Index j = 0; j < t; ++j) {
    dconv_k.col(1).array() += dxconv.col(j).array() * cache.x.col(j).array();
    dx.col(j).array() += dxconv.col(j).array() * conv_k.col(1).array();
    if (j > 0) {
      dconv_k.col(0).array() += dxconv.col(j).array() * cache.x.col(j - 1).array();
      dx.col(j - 1).array() += dxconv.col(j).array() * conv_k.col(0).array();
    }
    if (j + 1 < t) {
      dconv_k.col(2).array() += dxconv.col(j).array() * cache.x.col(j + 1).array();
      dx.col(j + 1).array() += dxconv.col(j).array() * conv_k.col(2).array();
    }
  }
  return dx;
}

}  // namespace rlpr::net
