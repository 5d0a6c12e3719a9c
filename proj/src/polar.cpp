#include "rlpr/bev/polar.hpp"

#include <cmath>
#include <stdexcept>

namespace rlpr::bev {

void GridSpec::validate() const {
  if (w_azi < 1 || h_rng < 1) throw std::invalid_argument("GridSpec: bin counts must be >= 1");
  if (!(m > 0.0)) throw std::invalid_argument("GridSpec: max range must be positive");
  if (!(fov > 0.0 && fov <= 2.0 * kPi + 1e-12))
    throw std::invalid_argument("GridSpec: fov out of (0, 2pi]");
}

GridSpec grid_for(SensorKind scan_kind, SensorKind dataset_radar_kind) {
  if (dataset_radar_kind == SensorKind::radar_4d) {
    // LiDAR is cropped to the radar's azimuthal coverage so both streams
    // share one geometry.
    return GridSpec{100, 100, 80.0, 2.0 * kPi / 3.0};
  }
  (void)scan_kind;
  return GridSpec{225, 50, 80.0, 2.0 * kPi};
}

PolarBEV project_polar(const PointCloud& cloud, const GridSpec& spec) {
  spec.validate();
  PolarBEV bev;
  bev.spec = spec;
  bev.sensor = cloud.sensor;
  bev.cells = MatX::Zero(spec.h_rng, spec.w_azi);

  const double half_fov = 0.5 * spec.fov;
  for (const auto& p : cloud.points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y))
      throw std::invalid_argument("project_polar: non-finite point");
    const double r = std::hypot(p.x, p.y);
    if (r >= spec.m) continue;
    const double theta = std::atan2(p.y, p.x);
    if (theta < -half_fov || theta > half_fov) continue;
    const double u = 0.5 * (1.0 - theta / half_fov) * spec.w_azi;
    const double v = (r / spec.m) * spec.h_rng;
    int col = static_cast<int>(std::floor(u)) % spec.w_azi;
    if (col < 0) col += spec.w_azi;
    const int row = static_cast<int>(std::floor(v));
    bev.cells(row, col) += 1.0;
  }
  return bev;
}

PointCloud rotate_cloud(const PointCloud& cloud, double dyaw) {
  PointCloud out = cloud;
  const double c = std::cos(dyaw), s = std::sin(dyaw);
  for (auto& p : out.points) {
    const double x = p.x, y = p.y;
    p.x = c * x - s * y;
    p.y = s * x + c * y;
  }
  out.pose.yaw = wrap_angle(cloud.pose.yaw + dyaw);
  return out;
}

}  // namespace rlpr::bev
