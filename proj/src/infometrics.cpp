#include "rlpr/infometrics/entropy.hpp"

#include <cmath>
#include <stdexcept>

namespace rlpr::infometrics {

MatX channel_average(const MatX& fm, int h, int w) {
  if (fm.cols() != static_cast<Eigen::Index>(h) * w)
    throw std::invalid_argument("channel_average: fm pixel count does not match h*w");
  MatX out(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) out(r, c) = fm.col(r * w + c).mean();
  return out;
}

VecX equal_width_edges(const std::vector<const MatX*>& maps, int bins) {
  if (bins < 1) throw std::invalid_argument("equal_width_edges: bins must be >= 1");
  if (maps.empty()) throw std::invalid_argument("equal_width_edges: no maps");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (const MatX* m : maps) {
    if (!m->allFinite()) throw std::invalid_argument("equal_width_edges: non-finite values");
    lo = std::min(lo, m->minCoeff());
    hi = std::max(hi, m->maxCoeff());
  }
  if (hi <= lo) hi = lo + 1e-12;
  VecX edges(bins + 1);
  for (int b = 0; b <= bins; ++b) edges(b) = lo + (hi - lo) * b / bins;
  return edges;
}

namespace {

int bin_of(double x, const VecX& edges) {
  const int bins = static_cast<int>(edges.size()) - 1;
  const double lo = edges(0), hi = edges(bins);
  int b = static_cast<int>(std::floor((x - lo) / (hi - lo) * bins));
  if (b < 0) b = 0;
  if (b >= bins) b = bins - 1;  // the max lands in the top bin
  return b;
}

}  // namespace

JointHist joint_histogram_with_edges(const MatX& map_l, const MatX& map_r, const VecX& edges_l,
                                     const VecX& edges_r) {
  if (map_l.rows() != map_r.rows() || map_l.cols() != map_r.cols())
    throw std::invalid_argument("joint_histogram: maps are not co-shaped");
  if (!map_l.allFinite() || !map_r.allFinite())
    throw std::invalid_argument("joint_histogram: non-finite values");
  const int bins = static_cast<int>(edges_l.size()) - 1;
  JointHist h;
  h.p = MatX::Zero(bins, bins);
  h.edges_l = edges_l;
  h.edges_r = edges_r;
  h.samples = static_cast<std::size_t>(map_l.size());
  for (Eigen::Index i = 0; i < map_l.size(); ++i)
    h.p(bin_of(map_l(i), edges_l), bin_of(map_r(i), edges_r)) += 1.0;
  h.p /= static_cast<double>(h.samples);
  return h;
}

JointHist joint_histogram(const MatX& map_l, const MatX& map_r, int bins) {
  return joint_histogram_with_edges(map_l, map_r, equal_width_edges({&map_l}, bins),
                                    equal_width_edges({&map_r}, bins));
}

JointHist joint_histogram(const std::vector<MatX>& maps_l, const std::vector<MatX>& maps_r,
                          int bins) {
  if (maps_l.size() != maps_r.size() || maps_l.empty())
    throw std::invalid_argument("joint_histogram: batch sizes differ or empty");
  std::vector<const MatX*> pl, pr;
  for (const auto& m : maps_l) pl.push_back(&m);
  for (const auto& m : maps_r) pr.push_back(&m);
  const VecX el = equal_width_edges(pl, bins);
  const VecX er = equal_width_edges(pr, bins);

  const int b = bins;
  JointHist h;
  h.p = MatX::Zero(b, b);
  h.edges_l = el;
  h.edges_r = er;
  h.samples = 0;
  for (std::size_t i = 0; i < maps_l.size(); ++i) {
    if (maps_l[i].size() != maps_r[i].size())
      throw std::invalid_argument("joint_histogram: pair maps are not co-shaped");
    for (Eigen::Index j = 0; j < maps_l[i].size(); ++j)
      h.p(bin_of(maps_l[i](j), el), bin_of(maps_r[i](j), er)) += 1.0;
    h.samples += static_cast<std::size_t>(maps_l[i].size());
  }
  h.p /= static_cast<double>(h.samples);
  return h;
}

double conditional_entropy(const JointHist& h, Direction dir) {
  const int b = h.bins();
  double out = 0.0;
  if (dir == Direction::L_given_R) {
    const VecX pr = h.p.colwise().sum().transpose();
    for (int r = 0; r < b; ++r) {
      if (pr(r) <= 0.0) continue;
      for (int l = 0; l < b; ++l) {
        const double p = h.p(l, r);
        if (p > 0.0) out -= p * std::log(p / pr(r));
      }
    }
  } else {
    const VecX pl = h.p.rowwise().sum();
    for (int l = 0; l < b; ++l) {
      if (pl(l) <= 0.0) continue;
      for (int r = 0; r < b; ++r) {
        const double p = h.p(l, r);
        if (p > 0.0) out -= p * std::log(p / pl(l));
      }
    }
  }
  return out;
}

double marginal_entropy(const JointHist& h, Marginal which) {
  const VecX m = which == Marginal::L ? VecX(h.p.rowwise().sum())
                                      : VecX(h.p.colwise().sum().transpose());
  double out = 0.0;
  for (Eigen::Index i = 0; i < m.size(); ++i)
    if (m(i) > 0.0) out -= m(i) * std::log(m(i));
  return out;
}

double joint_entropy(const JointHist& h) {
  double out = 0.0;
  for (Eigen::Index i = 0; i < h.p.size(); ++i)
    if (h.p(i) > 0.0) out -= h.p(i) * std::log(h.p(i));
  return out;
}

}  // namespace rlpr::infometrics
