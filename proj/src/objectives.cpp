#include "rlpr/objectives/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace rlpr::objectives {

namespace {

double euclidean(const VecX& a, const VecX& b) { return (a - b).norm(); }

// d ||q - x|| / dq, with the zero subgradient at coincident points.
VecX distance_grad(const VecX& q, const VecX& x, double dist) {
  if (dist <= 1e-300) return VecX::Zero(q.size());
  return (q - x) / dist;
}

struct HeadGrads {
  std::vector<VecX>* d_anchor;
  std::vector<VecX>* d_other;
};

// One head of the asymmetric InfoNCE: anchors index rows, positives sit on
// the diagonal. Gradients accumulate into pre-sized zero vectors.
double infonce_head(const std::vector<VecX>& anchor, const std::vector<VecX>& other, double tau,
                    std::vector<VecX>& d_anchor, std::vector<VecX>& d_other, double scale) {
  const std::size_t n = anchor.size();
  MatX sims(n, n);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) sims(a, b) = anchor[a].dot(other[b]) / tau;

  double loss = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    const double row_max = sims.row(a).maxCoeff();
    double denom = 0.0;
    for (std::size_t b = 0; b < n; ++b) denom += std::exp(sims(a, b) - row_max);
    const double lse = row_max + std::log(denom);
    loss += lse - sims(a, a);

    for (std::size_t b = 0; b < n; ++b) {
      const double p = std::exp(sims(a, b) - lse);
      const double ds = (p - (a == b ? 1.0 : 0.0)) / (static_cast<double>(n) * tau) * scale;
      d_anchor[a] += ds * other[b];
      d_other[b] += ds * anchor[a];
    }
  }
  return loss / static_cast<double>(n);
}

void check_pair_sizes(const PairBatch& batch) {
  if (batch.radar_loc.size() != batch.lidar_loc.size() ||
      batch.radar_glob.size() != batch.lidar_glob.size())
    throw std::invalid_argument("pair batch: radar/lidar head counts differ");
  if (batch.radar_loc.empty() && batch.radar_glob.empty())
    throw std::invalid_argument("pair batch: no descriptors");
  if (!(batch.temperature > 0.0)) throw std::invalid_argument("pair batch: temperature <= 0");
}

std::vector<VecX> zeros_like(const std::vector<VecX>& v) {
  std::vector<VecX> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = VecX::Zero(v[i].size());
  return out;
}

}  // namespace

TripletResult lazy_triplet_loss(const TripletBatch& batch, TripletMode mode) {
  if (batch.negatives.empty()) throw std::invalid_argument("triplet: J must be >= 1");
  if (!(batch.margin > 0.0)) throw std::invalid_argument("triplet: margin must be positive");

  TripletResult res;
  const double d_pos = euclidean(batch.query, batch.positive);

  int sel = 0;
  double d_sel = euclidean(batch.query, batch.negatives[0]);
  for (std::size_t j = 1; j < batch.negatives.size(); ++j) {
    const double d = euclidean(batch.query, batch.negatives[j]);
    const bool better = mode == TripletMode::hardest ? d < d_sel : d > d_sel;
    if (better) {
      d_sel = d;
      sel = static_cast<int>(j);
    }
  }

  const double hinge = batch.margin + d_pos - d_sel;
  res.d_query = VecX::Zero(batch.query.size());
  res.d_positive = VecX::Zero(batch.positive.size());
  res.d_negatives = zeros_like(batch.negatives);
  if (hinge > 0.0) {
    res.loss = hinge;
    res.selected_negative = sel;
    const VecX g_pos = distance_grad(batch.query, batch.positive, d_pos);
    const VecX g_neg = distance_grad(batch.query, batch.negatives[sel], d_sel);
    res.d_query = g_pos - g_neg;
    res.d_positive = -g_pos;
    res.d_negatives[sel] = g_neg;
  }
  return res;
}

PairLossResult infonce_loss(const PairBatch& batch) {
  check_pair_sizes(batch);
  PairLossResult res;
  res.d_radar_loc = zeros_like(batch.radar_loc);
  res.d_lidar_loc = zeros_like(batch.lidar_loc);
  res.d_radar_glob = zeros_like(batch.radar_glob);
  res.d_lidar_glob = zeros_like(batch.lidar_glob);
  if (!batch.radar_loc.empty())
    res.loss_local = infonce_head(batch.radar_loc, batch.lidar_loc, batch.temperature,
                                  res.d_radar_loc, res.d_lidar_loc, 1.0);
  if (!batch.radar_glob.empty())
    res.loss_global = infonce_head(batch.radar_glob, batch.lidar_glob, batch.temperature,
                                   res.d_radar_glob, res.d_lidar_glob, 1.0);
  res.total = res.loss_local + res.loss_global;
  return res;
}

PairLossResult infonce_loss_symmetric(const PairBatch& batch) {
  check_pair_sizes(batch);
  PairLossResult res;
  res.d_radar_loc = zeros_like(batch.radar_loc);
  res.d_lidar_loc = zeros_like(batch.lidar_loc);
  res.d_radar_glob = zeros_like(batch.radar_glob);
  res.d_lidar_glob = zeros_like(batch.lidar_glob);
  if (!batch.radar_loc.empty()) {
    res.loss_local = 0.5 * infonce_head(batch.radar_loc, batch.lidar_loc, batch.temperature,
                                        res.d_radar_loc, res.d_lidar_loc, 0.5) +
                     0.5 * infonce_head(batch.lidar_loc, batch.radar_loc, batch.temperature,
                                        res.d_lidar_loc, res.d_radar_loc, 0.5);
  }
  if (!batch.radar_glob.empty()) {
    res.loss_global = 0.5 * infonce_head(batch.radar_glob, batch.lidar_glob, batch.temperature,
                                         res.d_radar_glob, res.d_lidar_glob, 0.5) +
                      0.5 * infonce_head(batch.lidar_glob, batch.radar_glob, batch.temperature,
                                         res.d_lidar_glob, res.d_radar_glob, 0.5);
  }
  res.total = res.loss_local + res.loss_global;
  return res;
}

PairLossResult mse_loss(const PairBatch& batch) {
  check_pair_sizes(batch);
  PairLossResult res;
  res.d_radar_loc = zeros_like(batch.radar_loc);
  res.d_lidar_loc = zeros_like(batch.lidar_loc);
  res.d_radar_glob = zeros_like(batch.radar_glob);
  res.d_lidar_glob = zeros_like(batch.lidar_glob);

  const int heads = (batch.radar_loc.empty() ? 0 : 1) + (batch.radar_glob.empty() ? 0 : 1);
  const double head_w = 1.0 / heads;

  auto head = [&](const std::vector<VecX>& ra, const std::vector<VecX>& li,
                  std::vector<VecX>& d_ra, std::vector<VecX>& d_li) {
    const double n = static_cast<double>(ra.size());
    double loss = 0.0;
    for (std::size_t a = 0; a < ra.size(); ++a) {
      const VecX diff = ra[a] - li[a];
      loss += diff.squaredNorm() / n;
      d_ra[a] += (2.0 / n) * head_w * diff;
      d_li[a] -= (2.0 / n) * head_w * diff;
    }
    return loss;
  };

  if (!batch.radar_loc.empty())
    res.loss_local = head(batch.radar_loc, batch.lidar_loc, res.d_radar_loc, res.d_lidar_loc);
  if (!batch.radar_glob.empty())
    res.loss_global = head(batch.radar_glob, batch.lidar_glob, res.d_radar_glob, res.d_lidar_glob);
  res.total = head_w * (res.loss_local + res.loss_global);
  return res;
}

std::vector<std::uint64_t> mine_hard_negatives(std::uint64_t query_id,
                                               const VecX& query_descriptor,
                                               const Pose2D& query_pose,
                                               const std::vector<CacheEntry>& cache, int j,
                                               int pool_size, double negative_distance, Rng& rng) {
  if (j < 1) throw std::invalid_argument("mine_hard_negatives: J must be >= 1");
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < cache.size(); ++i) {
    if (cache[i].id == query_id) continue;
    if (pose_distance(cache[i].pose, query_pose) > negative_distance) candidates.push_back(i);
  }
  if (static_cast<int>(candidates.size()) < j)
    throw std::runtime_error("mine_hard_negatives: fewer than J candidates beyond " +
                             std::to_string(negative_distance) + " m");

  // Partial Fisher-Yates: uniform pool without replacement.
  const std::size_t pool =
      std::min<std::size_t>(static_cast<std::size_t>(std::max(pool_size, j)), candidates.size());
  for (std::size_t i = 0; i < pool; ++i) {
    const std::size_t k = i + static_cast<std::size_t>(rng.uniform_index(candidates.size() - i));
    std::swap(candidates[i], candidates[k]);
  }
  candidates.resize(pool);

  std::sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) {
    const double sa = cache[a].descriptor.dot(query_descriptor);
    const double sb = cache[b].descriptor.dot(query_descriptor);
    if (sa != sb) return sa > sb;
    return cache[a].id < cache[b].id;
  });

  std::vector<std::uint64_t> out;
  out.reserve(j);
  for (int i = 0; i < j; ++i) out.push_back(cache[candidates[i]].id);
  return out;
}

std::uint64_t sample_positive(std::uint64_t query_id, const Pose2D& query_pose,
                              const std::vector<IdPose>& candidates, double positive_radius,
                              Rng& rng) {
  std::vector<std::uint64_t> in_radius;
  for (const auto& c : candidates) {
    if (c.id == query_id) continue;
    if (pose_distance(c.pose, query_pose) < positive_radius) in_radius.push_back(c.id);
  }
  if (in_radius.empty())
    throw std::runtime_error("sample_positive: no candidate within " +
                             std::to_string(positive_radius) + " m of query " +
                             std::to_string(query_id));
  return in_radius[rng.uniform_index(in_radius.size())];
}

}  // namespace rlpr::objectives
