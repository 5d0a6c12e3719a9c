#include "rlpr/worldgen/world.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rlpr/core/rng.hpp"

namespace rlpr::worldgen {

World generate_world(std::uint64_t seed, const WorldConfig& cfg) {
  if (cfg.extent.width() <= 0.0 || cfg.extent.height() <= 0.0)
    throw std::invalid_argument("generate_world: degenerate extent");
  if (cfg.n_segments < 0 || cfg.n_circles < 0)
    throw std::invalid_argument("generate_world: negative landmark count");

  World world;
  world.seed = seed;
  world.extent = cfg.extent;
  Rng rng(mix_seeds(seed, 0x776f726c64ULL));  // "world"

  world.segments.reserve(cfg.n_segments);
  while (static_cast<int>(world.segments.size()) < cfg.n_segments) {
    double x0 = rng.uniform(cfg.extent.xmin, cfg.extent.xmax);
    double y0 = rng.uniform(cfg.extent.ymin, cfg.extent.ymax);
    double ang = rng.uniform(-kPi, kPi);
    double len = rng.uniform(cfg.segment_length_min, cfg.segment_length_max);
    double x1 = x0 + len * std::cos(ang);
    double y1 = y0 + len * std::sin(ang);
    if (!cfg.extent.contains(x1, y1)) continue;  // redraw until fully inside
    world.segments.push_back({x0, y0, x1, y1});
  }

  world.circles.reserve(cfg.n_circles);
  for (int i = 0; i < cfg.n_circles; ++i) {
    double r = rng.uniform(cfg.circle_radius_min, cfg.circle_radius_max);
    double cx = rng.uniform(cfg.extent.xmin + r, cfg.extent.xmax - r);
    double cy = rng.uniform(cfg.extent.ymin + r, cfg.extent.ymax - r);
    world.circles.push_back({cx, cy, r});
  }
  return world;
}

namespace {

double point_segment_distance(double px, double py, const Segment& s) {
  const double ex = s.x1 - s.x0, ey = s.y1 - s.y0;
  const double len2 = ex * ex + ey * ey;
  double t = len2 > 0.0 ? ((px - s.x0) * ex + (py - s.y0) * ey) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(px - (s.x0 + t * ex), py - (s.y0 + t * ey));
}

// Smallest t > 0 with origin + t*dir on the segment, or nullopt.
std::optional<double> ray_segment(double ox, double oy, double dx, double dy, const Segment& s) {
  const double ex = s.x1 - s.x0, ey = s.y1 - s.y0;
  const double denom = dx * ey - dy * ex;
  if (std::abs(denom) < 1e-12) return std::nullopt;  // parallel
  const double rx = s.x0 - ox, ry = s.y0 - oy;
  const double t = (rx * ey - ry * ex) / denom;
  const double u = (rx * dy - ry * dx) / denom;
  if (t <= 1e-9 || u < 0.0 || u > 1.0) return std::nullopt;
  return t;
}

std::optional<double> ray_circle(double ox, double oy, double dx, double dy, const Circle& c) {
  const double fx = ox - c.cx, fy = oy - c.cy;
  const double b = fx * dx + fy * dy;
  const double q = fx * fx + fy * fy - c.r * c.r;
  const double disc = b * b - q;
  if (disc < 0.0) return std::nullopt;
  const double root = std::sqrt(disc);
  double t = -b - root;  // near intersection first
  if (t <= 1e-9) t = -b + root;
  if (t <= 1e-9) return std::nullopt;
  return t;
}

std::optional<double> cast_ray(const World& world, double ox, double oy, double dx, double dy,
                               double range_max) {
  std::optional<double> best;
  for (const auto& s : world.segments) {
    if (auto t = ray_segment(ox, oy, dx, dy, s); t && *t < range_max && (!best || *t < *best))
      best = t;
  }
  for (const auto& c : world.circles) {
    if (auto t = ray_circle(ox, oy, dx, dy, c); t && *t < range_max && (!best || *t < *best))
      best = t;
  }
  return best;
}

}  // namespace

double distance_to_landmarks(const World& world, double x, double y) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& s : world.segments) best = std::min(best, point_segment_distance(x, y, s));
  for (const auto& c : world.circles)
    best = std::min(best, std::abs(std::hypot(x - c.cx, y - c.cy) - c.r));
  return best;
}

std::vector<Pose2D> generate_trajectory(const World& world, std::uint64_t seed,
                                        const TrajConfig& cfg) {
  if (cfg.spacing <= 0.0) throw std::invalid_argument("generate_trajectory: spacing <= 0");
  if (cfg.loops < 2) throw std::invalid_argument("generate_trajectory: loops must be >= 2");

  const int per_loop = static_cast<int>(std::llround(cfg.loop_length / cfg.spacing));
  if (per_loop < 8) throw std::invalid_argument("generate_trajectory: loop too short");

  const double radius = cfg.loop_length / (2.0 * kPi);
  const double cx = 0.5 * (world.extent.xmin + world.extent.xmax);
  const double cy = 0.5 * (world.extent.ymin + world.extent.ymax);

  Rng rng(mix_seeds(seed, 0x7472616aULL));  // "traj"
  const double phase = rng.uniform(-kPi, kPi);

  std::vector<Pose2D> poses;
  poses.reserve(static_cast<std::size_t>(per_loop) * cfg.loops);
  for (int loop = 0; loop < cfg.loops; ++loop) {
    // Later loops shadow loop one with a small radial drift, guaranteeing
    // revisit positives without duplicating poses exactly.
    const double drift = loop == 0 ? 0.0 : rng.uniform(0.5, cfg.revisit_offset_max);
    for (int i = 0; i < per_loop; ++i) {
      const double theta = 2.0 * kPi * i / per_loop;
      const double r = radius + cfg.wobble_amplitude * std::sin(3.0 * theta + phase) + drift;
      const double dr = 3.0 * cfg.wobble_amplitude * std::cos(3.0 * theta + phase);
      const double x = cx + r * std::cos(theta);
      const double y = cy + r * std::sin(theta);
      const double yaw = std::atan2(dr * std::sin(theta) + r * std::cos(theta),
                                    dr * std::cos(theta) - r * std::sin(theta));
      if (!world.extent.contains(x, y))
        throw std::invalid_argument("generate_trajectory: loop does not fit inside the world");
      poses.push_back(Pose2D::make(x, y, yaw));
    }
  }
  return poses;
}

SensorProfile default_profile(SensorKind kind) {
  switch (kind) {
    case SensorKind::lidar:
      return {kind, 1080, 2.0 * kPi, 80.0, 0.02, 0.0, 0, false};
    case SensorKind::scanning_radar:
      return {kind, 400, 2.0 * kPi, 80.0, 0.3, 0.1, 20, false};
    case SensorKind::single_chip_radar:
      return {kind, 96, 2.0 * kPi, 80.0, 0.5, 0.4, 40, false};
    case SensorKind::radar_4d:
      return {kind, 128, 2.0 * kPi / 3.0, 80.0, 0.3, 0.0, 0, true};
  }
  throw std::logic_error("default_profile: unknown sensor kind");
}

PointCloud simulate_scan(const World& world, const Pose2D& pose, const SensorProfile& profile,
                         std::uint64_t seed) {
  if (profile.fov <= 0.0 || profile.fov > 2.0 * kPi + 1e-12)
    throw std::invalid_argument("simulate_scan: fov out of (0, 2pi]");
  if (profile.range_max > 80.0 + 1e-12)
    throw std::invalid_argument("simulate_scan: range_max exceeds 80 m");

  PointCloud cloud;
  cloud.sensor = profile.kind;
  cloud.pose = pose;
  Rng rng(seed);

  for (int j = 0; j < profile.n_azimuths; ++j) {
    const double bearing = -0.5 * profile.fov + profile.fov * j / profile.n_azimuths;
    const double heading = pose.yaw + bearing;
    const auto t = cast_ray(world, pose.x, pose.y, std::cos(heading), std::sin(heading),
                            profile.range_max);
    if (!t) continue;
    double range = *t;
    if (profile.range_noise_sigma > 0.0) range += rng.normal(0.0, profile.range_noise_sigma);
    if (range <= 0.0 || range >= profile.range_max) continue;
    if (profile.dropout_prob > 0.0 && rng.uniform() < profile.dropout_prob) continue;
    const double z = profile.z_jittered ? rng.uniform(-2.0, 2.0) : 0.0;
    cloud.points.push_back({range * std::cos(bearing), range * std::sin(bearing), z});
  }

  for (int g = 0; g < profile.ghost_rate; ++g) {
    const double bearing = rng.uniform(-0.5 * profile.fov, 0.5 * profile.fov);
    const double range = rng.uniform(0.0, profile.range_max);
    const double z = profile.z_jittered ? rng.uniform(-2.0, 2.0) : 0.0;
    cloud.points.push_back({range * std::cos(bearing), range * std::sin(bearing), z});
  }
  return cloud;
}

PointCloud corrupt_snow(const PointCloud& cloud, int clutter_count, double near_bias,
                        std::uint64_t seed) {
  if (clutter_count < 0) throw std::invalid_argument("corrupt_snow: clutter_count < 0");
  PointCloud out = cloud;
  Rng rng(mix_seeds(seed, 0x736e6f77ULL));  // "snow"
  out.points.reserve(cloud.points.size() + clutter_count);
  for (int i = 0; i < clutter_count; ++i) {
    const double bearing = rng.uniform(-kPi, kPi);
    const double range = rng.exponential(near_bias);
    out.points.push_back({range * std::cos(bearing), range * std::sin(bearing), 0.0});
  }
  return out;
}

}  // namespace rlpr::worldgen
