#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rlpr/bev/polar.hpp"
#include "rlpr/core/rng.hpp"

using namespace rlpr;
using namespace rlpr::bev;

namespace {

PointCloud cloud_of(std::initializer_list<Point3> pts) {
  PointCloud c;
  c.points = pts;
  return c;
}

// Scalar reference for the projection, written independently of the
// implementation (different expression order on purpose).
bool reference_cell(double x, double y, const GridSpec& spec, int& row, int& col) {
  const double r = std::sqrt(x * x + y * y);
  if (r >= spec.m) return false;
  const double theta = std::atan2(y, x);
  const double half = spec.fov / 2.0;
  if (theta < -half || theta > half) return false;
  const double u = (1.0 - theta / half) * 0.5 * spec.w_azi;
  const double v = r / spec.m * spec.h_rng;
  col = static_cast<int>(std::floor(u));
  col %= spec.w_azi;
  if (col < 0) col += spec.w_azi;
  row = static_cast<int>(std::floor(v));
  return true;
}

}  // namespace

TEST_CASE("hand-evaluated projection cells") {
  const GridSpec spec{225, 50, 80.0, 2 * kPi};

  SUBCASE("point straight ahead at 40 m") {
    const auto bev = project_polar(cloud_of({{40, 0, 1}}), spec);
    CHECK(bev.cells(25, 112) == 1.0);
    CHECK(bev.cells.sum() == 1.0);
  }
  SUBCASE("point at range >= m is discarded") {
    const auto bev = project_polar(cloud_of({{85, 0, 0}}), spec);
    CHECK(bev.cells.sum() == 0.0);
    const auto at_m = project_polar(cloud_of({{80, 0, 0}}), spec);
    CHECK(at_m.cells.sum() == 0.0);
  }
  SUBCASE("point at bearing -pi/2") {
    const auto bev = project_polar(cloud_of({{0, -40, 0}}), spec);
    CHECK(bev.cells(25, 168) == 1.0);
  }
}

TEST_CASE("projection matches the scalar reference on random points") {
  const GridSpec spec{225, 50, 80.0, 2 * kPi};
  Rng rng(99);
  PointCloud cloud;
  for (int i = 0; i < 20000; ++i)
    cloud.points.push_back(
        {rng.uniform(-100, 100), rng.uniform(-100, 100), rng.uniform(-2, 2)});

  MatX expected = MatX::Zero(spec.h_rng, spec.w_azi);
  for (const auto& p : cloud.points) {
    int row, col;
    if (reference_cell(p.x, p.y, spec, row, col)) expected(row, col) += 1.0;
  }
  const auto bev = project_polar(cloud, spec);
  CHECK((bev.cells - expected).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("mass conservation: grid sum equals retained point count") {
  const GridSpec spec{64, 32, 80.0, 2 * kPi};
  Rng rng(3);
  PointCloud cloud;
  int retained = 0;
  for (int i = 0; i < 5000; ++i) {
    const double r = rng.uniform(0, 120);
    const double th = rng.uniform(-kPi, kPi);
    cloud.points.push_back({r * std::cos(th), r * std::sin(th), 0.0});
    if (r < spec.m) ++retained;
  }
  const auto bev = project_polar(cloud, spec);
  CHECK(bev.cells.sum() == static_cast<double>(retained));
  CHECK(bev.cells.minCoeff() >= 0.0);
}

TEST_CASE("rotation-shift equivariance for bin-center clouds") {
  const GridSpec spec{36, 10, 80.0, 2 * kPi};
  // Points at azimuth-bin centers and row centers.
  PointCloud cloud;
  Rng rng(17);
  for (int col = 0; col < spec.w_azi; col += 3) {
    const double u_center = col + 0.5;
    const double theta = (1.0 - 2.0 * u_center / spec.w_azi) * kPi;
    const double r = (rng.uniform_index(spec.h_rng) + 0.5) * spec.m / spec.h_rng;
    cloud.points.push_back({r * std::cos(theta), r * std::sin(theta), 0.0});
  }
  const auto base = project_polar(cloud, spec);

  for (int k : {1, 5, 17}) {
    const double dyaw = k * 2.0 * kPi / spec.w_azi;
    const auto rotated = project_polar(rotate_cloud(cloud, dyaw), spec);
    // Rotating by +k bins shifts content k columns to the left.
    MatX shifted(spec.h_rng, spec.w_azi);
    for (int c = 0; c < spec.w_azi; ++c)
      shifted.col(c) = base.cells.col((c + k) % spec.w_azi);
    CHECK((rotated.cells - shifted).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("range monotonicity in the row index") {
  const GridSpec spec{225, 50, 80.0, 2 * kPi};
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const double theta = rng.uniform(-kPi, kPi);
    const double r1 = rng.uniform(0.1, 79.0);
    const double r2 = rng.uniform(r1, 79.9);
    const auto b1 = project_polar(cloud_of({{r1 * std::cos(theta), r1 * std::sin(theta), 0}}),
                                  spec);
    const auto b2 = project_polar(cloud_of({{r2 * std::cos(theta), r2 * std::sin(theta), 0}}),
                                  spec);
    int row1 = -1, row2 = -1;
    for (int r = 0; r < spec.h_rng; ++r) {
      if (b1.cells.row(r).sum() > 0) row1 = r;
      if (b2.cells.row(r).sum() > 0) row2 = r;
    }
    CHECK(row2 >= row1);
  }
}

TEST_CASE("z never affects the grid") {
  const GridSpec spec{225, 50, 80.0, 2 * kPi};
  Rng rng(8);
  PointCloud flat;
  for (int i = 0; i < 500; ++i)
    flat.points.push_back({rng.uniform(-70, 70), rng.uniform(-70, 70), 0.0});
  PointCloud lifted = flat;
  for (auto& p : lifted.points) p.z += rng.uniform(-100, 100);
  CHECK((project_polar(flat, spec).cells - project_polar(lifted, spec).cells)
            .cwiseAbs()
            .maxCoeff() == 0.0);
}

TEST_CASE("limited FoV discards and remaps linearly") {
  const GridSpec spec{100, 100, 80.0, 2 * kPi / 3};
  SUBCASE("outside the wedge is discarded") {
    const auto bev = project_polar(cloud_of({{-40, 0, 0}}), spec);  // bearing pi
    CHECK(bev.cells.sum() == 0.0);
  }
  SUBCASE("wedge boundaries map to the column range ends") {
    // theta just below +fov/2 -> column 0; just above -fov/2 -> last column.
    const double half = spec.fov / 2;
    const double hi_theta = half - 1e-9;
    const auto hi = project_polar(
        cloud_of({{40 * std::cos(hi_theta), 40 * std::sin(hi_theta), 0}}), spec);
    CHECK(hi.cells(50, 0) == 1.0);
    const double lo_theta = -half + 1e-6;
    const auto lo = project_polar(
        cloud_of({{40 * std::cos(lo_theta), 40 * std::sin(lo_theta), 0}}), spec);
    CHECK(lo.cells(50, spec.w_azi - 1) == 1.0);
  }
  SUBCASE("center maps to the middle column") {
    const auto mid = project_polar(cloud_of({{40, 0, 0}}), spec);
    CHECK(mid.cells(50, 50) == 1.0);
  }
}

TEST_CASE("rotate_cloud identities") {
  PointCloud c = cloud_of({{1, 0, 0}, {3, 4, 2}});
  c.pose = {0, 0, 0.5};

  const auto same = rotate_cloud(c, 0.0);
  CHECK(same.points[0].x == 1.0);
  CHECK(same.pose.yaw == 0.5);

  const auto quarter = rotate_cloud(c, kPi / 2);
  CHECK(std::abs(quarter.points[0].x - 0.0) < 1e-12);
  CHECK(std::abs(quarter.points[0].y - 1.0) < 1e-12);
  CHECK(quarter.points[1].z == 2.0);

  const auto twice = rotate_cloud(rotate_cloud(c, kPi), kPi);
  for (std::size_t i = 0; i < c.points.size(); ++i) {
    CHECK(std::abs(twice.points[i].x - c.points[i].x) < 1e-12);
    CHECK(std::abs(twice.points[i].y - c.points[i].y) < 1e-12);
  }
}

TEST_CASE("invalid grid specs are rejected") {
  CHECK_THROWS_AS((GridSpec{0, 50, 80.0, 2 * kPi}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((GridSpec{225, 50, 0.0, 2 * kPi}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((GridSpec{225, 50, 80.0, 7.0}.validate()), std::invalid_argument);
}
