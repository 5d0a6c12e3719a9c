#pragma once

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "rlpr/bev/polar.hpp"
#include "rlpr/infometrics/entropy.hpp"
#include "rlpr/net/forward.hpp"
#include "rlpr/objectives/losses.hpp"
#include "rlpr/retrieval/evaluate.hpp"
#include "rlpr/worldgen/dataset.hpp"

namespace rlpr::tacma {

enum class Regime { frozen_r, frozen_l, both_trainable };
enum class LossKind { triplet, mse, infonce };
enum class Variant { no_pretrain, joint_opt, two_stage };

std::string to_string(Regime r);
std::string to_string(LossKind k);
std::string to_string(Variant v);
Regime regime_from_string(const std::string& s);
LossKind loss_from_string(const std::string& s);
Variant variant_from_string(const std::string& s);

// The training pipeline runs in f32 (checkpoints are f32, so save/load is
// lossless); the gradient-check suites instantiate the same code in f64.
using Params = net::BranchParams<float>;

struct TrainConfig {
  int stage1_epochs = 5;
  int stage2_epochs = 5;
  int stage1_steps_per_epoch = 30;
  int stage2_steps_per_epoch = 30;
  int joint_epochs = 5;  // JOINT_OPT runs a single phase
  int joint_steps_per_epoch = 30;
  int batch_size = 12;   // N
  double learning_rate = 5e-5;
  double lr_decay = 0.2;  // lr at epoch e = learning_rate * (1 - lr_decay)^e
  double margin = 0.5;    // alpha
  int negatives = 10;     // J
  double temperature = 0.07;
  int pool_size = 200;
  double positive_radius = 9.0;
  double negative_radius = 12.0;
  std::uint64_t seed = 0;
  Regime regime = Regime::frozen_r;
  LossKind loss = LossKind::infonce;
  objectives::TripletMode triplet_mode = objectives::TripletMode::hardest;
  net::ArchConfig arch;
  int probe_pairs = 64;
  int entropy_bins = 10;

  void validate() const;
  double lr_at(int epoch) const;
};

struct LogEntry {
  std::string stage;
  int epoch = 0;
  int step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double loss_local = 0.0;
  double loss_global = 0.0;
};
using RunLog = std::vector<LogEntry>;

void write_run_log(const std::filesystem::path& path, const RunLog& log);

// Dataset with every train BEV projected once up front.
struct LoadedDataset {
  worldgen::DatasetManifest manifest;
  SensorKind radar_kind = SensorKind::single_chip_radar;
  net::GridShape grid;
  std::vector<bev::PolarBEV> bevs;  // aligned with manifest.scans
  std::unordered_map<std::uint64_t, std::size_t> slot_of;

  const bev::PolarBEV& bev(std::uint64_t scan_id) const;
  const Pose2D& pose(std::uint64_t scan_id) const;
  std::vector<std::uint64_t> train_ids_of(SensorKind kind) const;
};

LoadedDataset load_dataset(const worldgen::DatasetManifest& manifest);

// Co-located probe pairs (LiDAR BEV, radar BEV), evenly spaced over the
// query loop; used for the entropy trajectory.
std::vector<std::pair<bev::PolarBEV, bev::PolarBEV>> make_probe_pairs(const LoadedDataset& ds,
                                                                      int count);

// Branch initialization seeds are derived from the run seed so the two
// parameter spaces are independent.
Params init_radar(const TrainConfig& cfg, const net::GridShape& grid);
Params init_lidar(const TrainConfig& cfg, const net::GridShape& grid);

struct Adam {
  explicit Adam(const Params& like);
  Params m, v;
  long t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  void step(Params& params, const Params& grads, double lr);
};

// Stage 1: modality-specific retrieval pre-training with the lazy triplet
// loss on d_full (1 query + 1 random positive + J mined hard negatives per
// step; the mining pool is re-encoded once per epoch).
Params pretrain_branch(const LoadedDataset& ds, const std::string& branch, const TrainConfig& cfg,
                       const Params& init, RunLog* log);

struct AlignResult {
  Params radar, lidar;
  RunLog log;
};

// Stage 2: alignment on co-located pairs under the configured regime x loss.
// Frozen parameters are bit-identical before and after.
AlignResult align(const Params& radar, const Params& lidar, const LoadedDataset& ds,
                  const TrainConfig& cfg);

struct VariantResult {
  Params radar, lidar;
  retrieval::MetricsReport metrics;  // cross-modal
  RunLog log;
  bool pretrained = false;
};

VariantResult run_variant(Variant variant, const LoadedDataset& ds, const TrainConfig& cfg);

struct AblationCell {
  Regime regime = Regime::frozen_r;
  LossKind loss = LossKind::infonce;
  retrieval::MetricsReport cross;
  double rpr1 = 0.0, lpr1 = 0.0;
  double rpr1_delta = 0.0, lpr1_delta = 0.0;  // vs pre-alignment
  infometrics::EntropyReport entropy;         // post-align
  std::string status = "ok";
};

struct AblationReport {
  double pre_rpr1 = 0.0, pre_lpr1 = 0.0;
  infometrics::EntropyReport pre_entropy;  // post-pretrain, pre-align
  std::vector<AblationCell> cells;
  std::uint64_t stage1_radar_hash = 0;  // shared-checkpoint witness
  std::uint64_t stage1_lidar_hash = 0;
};

// Shares one pair of stage-1 checkpoints across every cell; cell failures
// are recorded in the status column instead of aborting the grid.
AblationReport run_ablation(const std::vector<std::pair<Regime, LossKind>>& grid,
                            const LoadedDataset& ds, const TrainConfig& cfg);

std::uint64_t params_hash(const Params& params);

}  // namespace rlpr::tacma
