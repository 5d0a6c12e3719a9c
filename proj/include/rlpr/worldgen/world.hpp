#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "rlpr/core/types.hpp"

namespace rlpr::worldgen {

struct Segment {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

struct Circle {
  double cx = 0, cy = 0, r = 0;
};

struct Extent {
  double xmin = 0, xmax = 0, ymin = 0, ymax = 0;

  double width() const { return xmax - xmin; }
  double height() const { return ymax - ymin; }
  bool contains(double x, double y) const {
    return x >= xmin && x <= xmax && y >= ymin && y <= ymax;
  }
};

struct WorldConfig {
  Extent extent{-100.0, 100.0, -100.0, 100.0};
  int n_segments = 40;
  int n_circles = 20;
  double segment_length_min = 6.0;
  double segment_length_max = 30.0;
  double circle_radius_min = 0.5;
  double circle_radius_max = 3.0;
};

// Static landmark map. Same (seed, config) reproduces the identical world.
struct World {
  std::uint64_t seed = 0;
  Extent extent;
  std::vector<Segment> segments;
  std::vector<Circle> circles;

  std::size_t landmark_count() const { return segments.size() + circles.size(); }
};

World generate_world(std::uint64_t seed, const WorldConfig& cfg);

// Distance from a point to the nearest landmark surface (used by the
// geometry oracle: noise-free returns must lie on a surface).
double distance_to_landmarks(const World& world, double x, double y);

struct TrajConfig {
  int loops = 2;
  double spacing = 2.0;      // meters between consecutive poses
  double loop_length = 400.0;  // circumference of one loop
  double wobble_amplitude = 6.0;
  double revisit_offset_max = 1.5;  // lateral drift of later loops, <= 3 m revisit bound
};

// Smooth closed loop traversed cfg.loops times; later loops shadow loop one
// within revisit_offset_max so every query pose has nearby positives.
std::vector<Pose2D> generate_trajectory(const World& world, std::uint64_t seed,
                                        const TrajConfig& cfg);

struct SensorProfile {
  SensorKind kind = SensorKind::lidar;
  int n_azimuths = 1080;
  double fov = 2.0 * kPi;          // radians, (0, 2pi]
  double range_max = 80.0;         // meters, <= the projection's maximum range
  double range_noise_sigma = 0.0;  // meters
  double dropout_prob = 0.0;       // [0, 1]
  int ghost_rate = 0;              // uniform clutter points per scan
  bool z_jittered = false;         // z in [-2, 2] if set, else planar z = 0
};

// Built-in profiles ordered by sparsity/noise: lidar, scanning radar,
// single-chip radar, 4D radar (limited FoV, jittered z).
SensorProfile default_profile(SensorKind kind);

// Ray-cast scan at a pose. Points are in the sensor frame; misses produce
// no point. Never emits ranges at or beyond range_max.
PointCloud simulate_scan(const World& world, const Pose2D& pose, const SensorProfile& profile,
                         std::uint64_t seed);

// Appends clutter with exponentially distributed range (mean near_bias),
// uniform bearing; original points are untouched.
PointCloud corrupt_snow(const PointCloud& cloud, int clutter_count, double near_bias,
                        std::uint64_t seed);

}  // namespace rlpr::worldgen
