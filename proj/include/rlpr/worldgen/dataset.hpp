#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rlpr/worldgen/world.hpp"

namespace rlpr::worldgen {

struct ScanRecord {
  std::uint64_t scan_id = 0;
  SensorKind sensor = SensorKind::lidar;
  Pose2D pose;
  std::string path;  // relative to the manifest
};

struct DatasetManifest {
  std::uint64_t world_seed = 0;
  std::string radar_profile;  // scanning_radar | single_chip_radar | radar_4d
  std::vector<ScanRecord> scans;
  std::vector<std::uint64_t> train_ids;
  std::vector<std::uint64_t> database_ids;  // loop-1 LiDAR
  std::vector<std::uint64_t> query_ids;     // loop-2 radar
  std::filesystem::path root;               // directory holding the manifest

  const ScanRecord& record(std::uint64_t scan_id) const;
};

struct DatasetConfig {
  std::uint64_t seed = 0;
  WorldConfig world;
  TrajConfig traj;
  SensorKind radar_kind = SensorKind::single_chip_radar;
  double positive_radius = 9.0;  // every query must have a database pose within this
};

// Scan ids: pose index i yields LiDAR scan 2i and radar scan 2i+1, so the
// co-located pair of any scan is id ^ 1.
inline std::uint64_t paired_scan_id(std::uint64_t scan_id) { return scan_id ^ 1ULL; }

// Generates world + trajectory + paired scans, writes scan files and the
// manifest under out_dir, and returns the manifest. Fails if any query pose
// lacks a database pose within cfg.positive_radius.
DatasetManifest build_dataset(const DatasetConfig& cfg, const std::filesystem::path& out_dir);

// Binary scan container: "RLPRSCAN", version u16, count u32, count x 3 f32.
void write_scan_file(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud read_scan_file(const std::filesystem::path& path);

// Plain-text manifest (schema documented in the README).
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);

// Loads the point cloud behind a scan record (pose and id restored from the
// manifest, not the scan file).
PointCloud load_scan(const DatasetManifest& manifest, std::uint64_t scan_id);

}  // namespace rlpr::worldgen
