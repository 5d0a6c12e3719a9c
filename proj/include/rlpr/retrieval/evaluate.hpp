#pragma once

#include <string>
#include <vector>

#include "rlpr/bev/polar.hpp"
#include "rlpr/core/parallel.hpp"
#include "rlpr/net/forward.hpp"
#include "rlpr/retrieval/index.hpp"
#include "rlpr/worldgen/dataset.hpp"
#include "rlpr/worldgen/world.hpp"

namespace rlpr::retrieval {

enum class EvalMode { cross, rpr, lpr };

EvalMode eval_mode_from_string(const std::string& s);
std::string to_string(EvalMode m);

struct EvalOptions {
  EvalMode mode = EvalMode::cross;
  std::vector<int> ks = {1, 5, 10, 20};
  double radius = 9.0;
  bool corrupt_snow = false;  // applies to LiDAR queries only
  int snow_clutter = 500;
  double snow_near_bias = 8.0;
  std::uint64_t snow_seed = 0;
};

// Encodes one scan id into a d_full descriptor with the branch matching its
// modality (cross) or the forced branch (unimodal modes).
template <class S>
VecX encode_scan(const worldgen::DatasetManifest& manifest, std::uint64_t scan_id,
                 const net::BranchParams<S>& params, const EvalOptions& opts, bool is_query) {
  PointCloud cloud = worldgen::load_scan(manifest, scan_id);
  if (opts.corrupt_snow && is_query && cloud.sensor == SensorKind::lidar)
    cloud = worldgen::corrupt_snow(cloud, opts.snow_clutter, opts.snow_near_bias,
                                   mix_seeds(opts.snow_seed, scan_id));
  const SensorKind radar_kind = sensor_kind_from_string(manifest.radar_profile);
  const bev::PolarBEV grid = bev::project_polar(cloud, bev::grid_for(cloud.sensor, radar_kind));
  return net::forward(grid, params).d_full;
}

// Cross-modal: radar queries against the LiDAR database. Unimodal RPR/LPR:
// both sides use one branch, the database poses are shared with the
// cross-modal protocol via the co-located paired scans.
template <class S>
MetricsReport evaluate(const net::BranchParams<S>& radar_params,
                       const net::BranchParams<S>& lidar_params,
                       const worldgen::DatasetManifest& manifest, const EvalOptions& opts) {
  std::vector<std::uint64_t> db_ids, query_ids;
  const net::BranchParams<S>* db_branch = &lidar_params;
  const net::BranchParams<S>* query_branch = &radar_params;

  switch (opts.mode) {
    case EvalMode::cross:
      db_ids = manifest.database_ids;
      query_ids = manifest.query_ids;
      break;
    case EvalMode::rpr:
      for (auto id : manifest.database_ids) db_ids.push_back(worldgen::paired_scan_id(id));
      query_ids = manifest.query_ids;
      db_branch = &radar_params;
      break;
    case EvalMode::lpr:
      db_ids = manifest.database_ids;
      for (auto id : manifest.query_ids) query_ids.push_back(worldgen::paired_scan_id(id));
      query_branch = &lidar_params;
      break;
  }

  MatX db(db_ids.size(), net::full_descriptor_dim(radar_params.arch));
  std::vector<Pose2D> db_poses(db_ids.size());
  parallel_for(db_ids.size(), [&](std::size_t i) {
    db.row(i) = encode_scan(manifest, db_ids[i], *db_branch, opts, false).transpose();
    db_poses[i] = manifest.record(db_ids[i]).pose;
  });
  const DescriptorIndex index = build_index(db, db_poses, db_ids);

  std::vector<QueryItem> queries(query_ids.size());
  parallel_for(query_ids.size(), [&](std::size_t i) {
    queries[i].id = query_ids[i];
    queries[i].pose = manifest.record(query_ids[i]).pose;
    queries[i].descriptor = encode_scan(manifest, query_ids[i], *query_branch, opts, true);
  });

  return compute_metrics(index, queries, opts.ks, opts.radius);
}

}  // namespace rlpr::retrieval
