#pragma once

#include <string>
#include <utility>
#include <vector>

#include "rlpr/bev/polar.hpp"
#include "rlpr/core/types.hpp"
#include "rlpr/net/forward.hpp"

namespace rlpr::infometrics {

// Normalized 2D histogram over paired scalar maps. Rows index the LiDAR
// variable L, columns the radar variable R.
struct JointHist {
  MatX p;        // (B, B), entries >= 0, sums to 1
  VecX edges_l;  // B+1 ascending
  VecX edges_r;
  std::size_t samples = 0;

  int bins() const { return static_cast<int>(p.rows()); }
};

enum class Direction { L_given_R, R_given_L };
enum class Marginal { L, R };

// Mean over the channel axis per spatial cell: (C, H*W) -> (h, w).
MatX channel_average(const MatX& fm, int h, int w);

// Equal-width bin edges over the observed [min, max] (max bumped by 1e-12
// when the map is constant).
VecX equal_width_edges(const std::vector<const MatX*>& maps, int bins);

JointHist joint_histogram(const MatX& map_l, const MatX& map_r, int bins);
JointHist joint_histogram(const std::vector<MatX>& maps_l, const std::vector<MatX>& maps_r,
                          int bins);
JointHist joint_histogram_with_edges(const MatX& map_l, const MatX& map_r, const VecX& edges_l,
                                     const VecX& edges_r);

// Eq.-level entropies in nats, with 0 * log(0 / .) := 0.
double conditional_entropy(const JointHist& h, Direction dir);
double marginal_entropy(const JointHist& h, Marginal which);
double joint_entropy(const JointHist& h);

struct EntropyReport {
  double h_l = 0.0, h_r = 0.0;
  double h_l_given_r = 0.0, h_r_given_l = 0.0;
  int bins = 10;
  std::size_t pairs = 0;
  std::string phase;  // init | post-pretrain | post-align
};

// Probe pairs are (LiDAR BEV, radar BEV) from co-located scans. Bin edges
// are shared across the probe set per modality; entropies are per-pair and
// averaged with compensated summation.
template <class S>
EntropyReport entropy_report(const net::BranchParams<S>& radar_params,
                             const net::BranchParams<S>& lidar_params,
                             const std::vector<std::pair<bev::PolarBEV, bev::PolarBEV>>& probe,
                             const std::string& phase, int bins) {
  if (probe.empty()) throw std::invalid_argument("entropy_report: empty probe set");
  const net::NetShapes shapes = net::derive_shapes(lidar_params.arch, lidar_params.grid);

  std::vector<MatX> maps_l, maps_r;
  maps_l.reserve(probe.size());
  maps_r.reserve(probe.size());
  for (const auto& [lidar_bev, radar_bev] : probe) {
    maps_l.push_back(channel_average(
        net::forward_features(lidar_bev, lidar_params).template cast<double>(), shapes.fm_h,
        shapes.fm_w));
    maps_r.push_back(channel_average(
        net::forward_features(radar_bev, radar_params).template cast<double>(), shapes.fm_h,
        shapes.fm_w));
  }

  std::vector<const MatX*> ptrs_l, ptrs_r;
  for (const auto& m : maps_l) ptrs_l.push_back(&m);
  for (const auto& m : maps_r) ptrs_r.push_back(&m);
  const VecX edges_l = equal_width_edges(ptrs_l, bins);
  const VecX edges_r = equal_width_edges(ptrs_r, bins);

  double sums[4] = {0, 0, 0, 0};
  double comp[4] = {0, 0, 0, 0};
  auto kahan_add = [&](int i, double v) {
    const double y = v - comp[i];
    const double t = sums[i] + y;
    comp[i] = (t - sums[i]) - y;
    sums[i] = t;
  };
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const JointHist h = joint_histogram_with_edges(maps_l[i], maps_r[i], edges_l, edges_r);
    kahan_add(0, marginal_entropy(h, Marginal::L));
    kahan_add(1, marginal_entropy(h, Marginal::R));
    kahan_add(2, conditional_entropy(h, Direction::L_given_R));
    kahan_add(3, conditional_entropy(h, Direction::R_given_L));
  }

  EntropyReport rep;
  const double n = static_cast<double>(probe.size());
  rep.h_l = sums[0] / n;
  rep.h_r = sums[1] / n;
  rep.h_l_given_r = sums[2] / n;
  rep.h_r_given_l = sums[3] / n;
  rep.bins = bins;
  rep.pairs = probe.size();
  rep.phase = phase;
  return rep;
}

}  // namespace rlpr::infometrics
