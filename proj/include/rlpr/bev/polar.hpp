#pragma once

#include "rlpr/core/types.hpp"

namespace rlpr::bev {

// Polar grid geometry: columns bin azimuth (width w_azi), rows bin range
// (height h_rng), out to m meters. fov < 2pi remaps the retained bearing
// interval linearly onto the full column range.
struct GridSpec {
  int w_azi = 225;
  int h_rng = 50;
  double m = 80.0;
  double fov = 2.0 * kPi;

  bool operator==(const GridSpec&) const = default;
  void validate() const;
};

// Occupancy-count grid: cells(row, col) = number of points binned there.
struct PolarBEV {
  MatX cells;  // h_rng x w_azi
  GridSpec spec;
  SensorKind sensor = SensorKind::lidar;
};

// Grid used for a given scan kind. Limited-FoV radars (4D) use the square
// 100x100 grid and the paired LiDAR is cropped to the same azimuthal window;
// all other kinds use the 225x50 full-circle grid.
GridSpec grid_for(SensorKind scan_kind, SensorKind dataset_radar_kind);

// Maps each point to (u, v) with u = (1 - theta/(fov/2))/2 * w_azi and
// v = r/m * h_rng, incrementing cell (floor(v), floor(u) mod w_azi).
// Points with r >= m or bearing outside [-fov/2, fov/2] are discarded;
// z never participates.
PolarBEV project_polar(const PointCloud& cloud, const GridSpec& spec);

// Rotates x/y about the origin by dyaw, keeps z, updates the pose yaw.
PointCloud rotate_cloud(const PointCloud& cloud, double dyaw);

}  // namespace rlpr::bev
