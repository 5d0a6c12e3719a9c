#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace rlpr {

// Dense aliases used throughout. Geometry and metrics always run in double;
// network code is templated on the scalar (float for training, double in
// the gradient-check suites).
template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

using MatX = Mat<double>;
using VecX = Vec<double>;

constexpr double kPi = 3.14159265358979323846;

// Normalize an angle to (-pi, pi].
inline double wrap_angle(double a) {
  a = std::fmod(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  if (a > kPi) a -= 2.0 * kPi;
  return a;
}

struct Pose2D {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;  // radians, (-pi, pi]

  static Pose2D make(double x, double y, double yaw) { return {x, y, wrap_angle(yaw)}; }
};

inline double pose_distance(const Pose2D& a, const Pose2D& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

enum class SensorKind { lidar, scanning_radar, single_chip_radar, radar_4d };

inline bool is_radar(SensorKind k) { return k != SensorKind::lidar; }

std::string to_string(SensorKind k);
SensorKind sensor_kind_from_string(const std::string& s);

struct Point3 {
  double x = 0.0, y = 0.0, z = 0.0;
};

// One sensor scan: points in the sensor frame plus the ground-truth pose.
struct PointCloud {
  std::vector<Point3> points;
  SensorKind sensor = SensorKind::lidar;
  Pose2D pose;
  std::uint64_t scan_id = 0;
};

}  // namespace rlpr
