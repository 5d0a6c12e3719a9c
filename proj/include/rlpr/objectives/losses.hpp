#pragma once

#include <cstdint>
#include <vector>

#include "rlpr/core/rng.hpp"
#include "rlpr/core/types.hpp"

namespace rlpr::objectives {

// Eq.-level losses operate on double descriptors and return analytic input
// gradients so the finite-difference oracle can check them in isolation.

enum class TripletMode {
  hardest,  // hinge against the *closest* negative (standard lazy triplet)
  literal   // hinge against the farthest negative, as the formula is printed
};

struct TripletBatch {
  VecX query;
  VecX positive;
  std::vector<VecX> negatives;  // J >= 1
  double margin = 0.5;
};

struct TripletResult {
  double loss = 0.0;
  int selected_negative = -1;  // index through which the hinge is active
  VecX d_query, d_positive;
  std::vector<VecX> d_negatives;
};

TripletResult lazy_triplet_loss(const TripletBatch& batch, TripletMode mode = TripletMode::hardest);

// Aligned co-located pairs, local and global heads carried separately.
// Either head may be absent (empty vectors) under the LD/GD ablations.
struct PairBatch {
  std::vector<VecX> radar_loc, lidar_loc;
  std::vector<VecX> radar_glob, lidar_glob;
  double temperature = 0.07;
};

struct PairLossResult {
  double loss_local = 0.0;
  double loss_global = 0.0;
  double total = 0.0;
  std::vector<VecX> d_radar_loc, d_lidar_loc;
  std::vector<VecX> d_radar_glob, d_lidar_glob;
};

// Asymmetric InfoNCE (radar anchors, positives on the diagonal), computed
// with max subtraction. total = local + global.
PairLossResult infonce_loss(const PairBatch& batch);

// Mean of the asymmetric loss and its anchor-swapped transpose.
PairLossResult infonce_loss_symmetric(const PairBatch& batch);

// Mean over pairs and heads of the squared Euclidean distance.
PairLossResult mse_loss(const PairBatch& batch);

// ---------------------------------------------------------------------------
// Sampling for the pre-training stage.

struct CacheEntry {
  std::uint64_t id = 0;
  Pose2D pose;
  VecX descriptor;  // d_full of the cached scan
};

// Top-J most descriptor-similar entries among a uniformly sampled pool of
// candidates strictly beyond negative_distance of the query pose. Ties break
// toward the lower id. Throws when fewer than J candidates qualify.
std::vector<std::uint64_t> mine_hard_negatives(std::uint64_t query_id,
                                               const VecX& query_descriptor,
                                               const Pose2D& query_pose,
                                               const std::vector<CacheEntry>& cache, int j,
                                               int pool_size, double negative_distance, Rng& rng);

struct IdPose {
  std::uint64_t id = 0;
  Pose2D pose;
};

// Uniform draw among candidates within positive_radius of the query pose,
// excluding the query itself. Throws when no positive exists.
std::uint64_t sample_positive(std::uint64_t query_id, const Pose2D& query_pose,
                              const std::vector<IdPose>& candidates, double positive_radius,
                              Rng& rng);

}  // namespace rlpr::objectives
