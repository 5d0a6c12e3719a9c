#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rlpr/core/rng.hpp"
#include "rlpr/infometrics/entropy.hpp"

using namespace rlpr;
using namespace rlpr::infometrics;

namespace {

JointHist hist_from(const MatX& p) {
  JointHist h;
  h.p = p;
  h.edges_l = VecX::LinSpaced(p.rows() + 1, 0.0, 1.0);
  h.edges_r = VecX::LinSpaced(p.cols() + 1, 0.0, 1.0);
  h.samples = 1;
  return h;
}

JointHist random_hist(int bins, Rng& rng) {
  MatX p(bins, bins);
  for (Eigen::Index i = 0; i < p.size(); ++i)
    p.data()[i] = rng.uniform() < 0.3 ? 0.0 : rng.uniform();  // plenty of empty cells
  if (p.sum() == 0.0) p(0, 0) = 1.0;
  p /= p.sum();
  return hist_from(p);
}

// Direct enumeration oracle over raw sample pairs.
struct BruteEntropies {
  double h_l, h_r, h_lr, h_l_given_r, h_r_given_l;
};

BruteEntropies brute_force(const std::vector<std::pair<int, int>>& samples, int bins) {
  MatX joint = MatX::Zero(bins, bins);
  for (auto [l, r] : samples) joint(l, r) += 1.0;
  joint /= static_cast<double>(samples.size());
  const VecX pl = joint.rowwise().sum();
  const VecX pr = joint.colwise().sum().transpose();
  auto ent = [](const VecX& p) {
    double h = 0;
    for (Eigen::Index i = 0; i < p.size(); ++i)
      if (p(i) > 0) h -= p(i) * std::log(p(i));
    return h;
  };
  double h_lr = 0;
  for (Eigen::Index i = 0; i < joint.size(); ++i)
    if (joint.data()[i] > 0) h_lr -= joint.data()[i] * std::log(joint.data()[i]);
  return {ent(pl), ent(pr), h_lr, h_lr - ent(pr), h_lr - ent(pl)};
}

}  // namespace

TEST_CASE("channel average") {
  MatX fm(2, 6);  // 2 channels, 2x3 map
  fm.row(0) << 1, 2, 3, 4, 5, 6;
  fm.row(1) << 3, 4, 5, 6, 7, 8;
  const MatX m = channel_average(fm, 2, 3);
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 3);
  CHECK(m(0, 0) == 2.0);  // mean of (1, 3)
  CHECK(m(1, 2) == 7.0);

  const MatX constant = channel_average(MatX::Constant(5, 12, 4.25), 3, 4);
  CHECK((constant.array() == 4.25).all());
}

TEST_CASE("joint histogram: diagonal, degenerate and independent cases") {
  SUBCASE("identical maps put all mass on the diagonal") {
    MatX m(2, 2);
    m << 0.0, 1.0, 0.25, 0.9;
    const JointHist h = joint_histogram(m, m, 2);
    CHECK(h.p(0, 1) == 0.0);
    CHECK(h.p(1, 0) == 0.0);
    CHECK(h.p.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(conditional_entropy(h, Direction::L_given_R) == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("constant maps collapse to one cell with zero entropies") {
    const MatX m = MatX::Constant(3, 3, 7.0);
    const JointHist h = joint_histogram(m, m, 4);
    CHECK(h.p.maxCoeff() == doctest::Approx(1.0));
    CHECK(marginal_entropy(h, Marginal::L) == doctest::Approx(0.0));
    CHECK(marginal_entropy(h, Marginal::R) == doctest::Approx(0.0));
    CHECK(conditional_entropy(h, Direction::L_given_R) == doctest::Approx(0.0));
  }
  SUBCASE("independent uniforms: H(L|R) approaches H(L)") {
    Rng rng(11);
    MatX a(100, 100), b(100, 100);
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      a.data()[i] = rng.uniform();
      b.data()[i] = rng.uniform();
    }
    const JointHist h = joint_histogram(a, b, 10);
    const double hl = marginal_entropy(h, Marginal::L);
    const double hlr = conditional_entropy(h, Direction::L_given_R);
    CHECK(std::abs(hl - hlr) < 0.05);
  }
  SUBCASE("non-finite values are rejected") {
    MatX bad = MatX::Zero(2, 2);
    bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(joint_histogram(bad, MatX::Zero(2, 2), 2), std::invalid_argument);
  }
}

TEST_CASE("conditional entropy analytic 2x2 cases") {
  SUBCASE("independent uniform") {
    MatX p(2, 2);
    p << 0.25, 0.25, 0.25, 0.25;
    CHECK(std::abs(conditional_entropy(hist_from(p), Direction::L_given_R) - std::log(2.0)) <
          1e-12);
  }
  SUBCASE("deterministic mapping") {
    MatX p(2, 2);
    p << 0.5, 0.0, 0.0, 0.5;
    CHECK(conditional_entropy(hist_from(p), Direction::L_given_R) == doctest::Approx(0.0));
  }
  SUBCASE("hand-evaluated mixed case") {
    MatX p(2, 2);
    p << 0.4, 0.1, 0.1, 0.4;
    const double h2 = -(0.8 * std::log(0.8) + 0.2 * std::log(0.2));
    CHECK(std::abs(conditional_entropy(hist_from(p), Direction::L_given_R) - h2) < 1e-12);
    CHECK(h2 == doctest::Approx(0.5004).epsilon(1e-3));
  }
}

TEST_CASE("marginal entropy analytic cases") {
  SUBCASE("uniform B = 10") {
    const JointHist h = hist_from(MatX::Constant(10, 10, 0.01));
    CHECK(std::abs(marginal_entropy(h, Marginal::L) - std::log(10.0)) < 1e-12);
  }
  SUBCASE("point mass") {
    MatX p = MatX::Zero(4, 4);
    p(2, 1) = 1.0;
    CHECK(marginal_entropy(hist_from(p), Marginal::L) == 0.0);
    CHECK(marginal_entropy(hist_from(p), Marginal::R) == 0.0);
  }
  SUBCASE("binary 0.8 / 0.2") {
    MatX p = MatX::Zero(2, 2);
    p(0, 0) = 0.8;
    p(1, 1) = 0.2;
    const double expected = -(0.8 * std::log(0.8) + 0.2 * std::log(0.2));
    CHECK(std::abs(marginal_entropy(hist_from(p), Marginal::L) - expected) < 1e-12);
  }
}

TEST_CASE("chain rule and bounds on random histograms") {
  Rng rng(12);
  for (int trial = 0; trial < 500; ++trial) {
    const JointHist h = random_hist(10, rng);
    const double hl = marginal_entropy(h, Marginal::L);
    const double hr = marginal_entropy(h, Marginal::R);
    const double hlr = conditional_entropy(h, Direction::L_given_R);
    const double hrl = conditional_entropy(h, Direction::R_given_L);
    CHECK(std::abs(hlr + hr - (hrl + hl)) < 1e-9);  // both equal H(L,R)
    CHECK(hlr >= -1e-12);
    CHECK(hrl >= -1e-12);
    CHECK(hlr <= hl + 1e-9);
    CHECK(hrl <= hr + 1e-9);
    CHECK(hl <= std::log(10.0) + 1e-12);
    CHECK(hr <= std::log(10.0) + 1e-12);
  }
}

TEST_CASE("bin relabeling leaves entropies unchanged") {
  Rng rng(13);
  const JointHist h = random_hist(6, rng);
  std::vector<int> perm{3, 0, 5, 1, 4, 2};
  MatX permuted(6, 6);
  for (int r = 0; r < 6; ++r) permuted.row(perm[r]) = h.p.row(r);
  const JointHist hp = hist_from(permuted);
  CHECK(std::abs(marginal_entropy(h, Marginal::L) - marginal_entropy(hp, Marginal::L)) < 1e-12);
  CHECK(std::abs(marginal_entropy(h, Marginal::R) - marginal_entropy(hp, Marginal::R)) < 1e-12);
  CHECK(std::abs(conditional_entropy(h, Direction::L_given_R) -
                 conditional_entropy(hp, Direction::L_given_R)) < 1e-12);
  CHECK(std::abs(conditional_entropy(h, Direction::R_given_L) -
                 conditional_entropy(hp, Direction::R_given_L)) < 1e-12);
}

TEST_CASE("brute-force equivalence on small maps") {
  Rng rng(14);
  for (int trial = 0; trial < 50; ++trial) {
    const int bins = 4;
    MatX a(4, 4), b(4, 4);  // 16-cell maps
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      a.data()[i] = rng.uniform();
      b.data()[i] = rng.uniform();
    }
    const JointHist h = joint_histogram(a, b, bins);

    // Recover the bin assignment directly and enumerate.
    std::vector<std::pair<int, int>> samples;
    auto bin_of = [bins](double x, const VecX& edges) {
      const double lo = edges(0), hi = edges(bins);
      int bi = static_cast<int>(std::floor((x - lo) / (hi - lo) * bins));
      return std::clamp(bi, 0, bins - 1);
    };
    for (Eigen::Index i = 0; i < a.size(); ++i)
      samples.push_back({bin_of(a.data()[i], h.edges_l), bin_of(b.data()[i], h.edges_r)});
    const BruteEntropies bf = brute_force(samples, bins);

    CHECK(std::abs(marginal_entropy(h, Marginal::L) - bf.h_l) < 1e-12);
    CHECK(std::abs(marginal_entropy(h, Marginal::R) - bf.h_r) < 1e-12);
    CHECK(std::abs(conditional_entropy(h, Direction::L_given_R) - bf.h_l_given_r) < 1e-12);
    CHECK(std::abs(conditional_entropy(h, Direction::R_given_L) - bf.h_r_given_l) < 1e-12);
    CHECK(std::abs(joint_entropy(h) - bf.h_lr) < 1e-12);
  }
}

TEST_CASE("entropy_report: identical branches imply H(L|R) = 0 and H(L) = H(R)") {
  net::ArchConfig arch;
  arch.patch_rows = 3;
  arch.patch_cols = 3;
  arch.embed_dim = 4;
  arch.pce_hidden = 4;
  arch.backbone_c1 = 4;
  arch.backbone_c2 = 6;
  arch.attn_dim = 6;
  arch.attn_heads = 2;
  arch.attn_ff = 8;
  arch.vlad_clusters = 3;
  arch.descriptor_dim = 8;
  const net::GridShape grid{12, 15};
  const auto params = net::init_params<float>(3, arch, grid, "lidar");

  std::vector<std::pair<bev::PolarBEV, bev::PolarBEV>> probe;
  Rng rng(15);
  for (int i = 0; i < 6; ++i) {
    bev::PolarBEV b;
    b.spec = bev::GridSpec{15, 12, 80.0, 2 * kPi};
    b.cells.resize(12, 15);
    for (Eigen::Index j = 0; j < b.cells.size(); ++j)
      b.cells.data()[j] = static_cast<double>(rng.uniform_index(5));
    probe.emplace_back(b, b);  // identical inputs on both sides
  }

  const EntropyReport rep = entropy_report(params, params, probe, "init", 10);
  CHECK(rep.h_l_given_r == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(rep.h_r_given_l == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(rep.h_l == doctest::Approx(rep.h_r).epsilon(1e-12));
  CHECK(rep.pairs == 6);
  CHECK(rep.phase == "init");

  // Chain rule holds on the report means as well (identical pairs).
  CHECK(std::abs(rep.h_l_given_r + rep.h_r - rep.h_r_given_l - rep.h_l) < 1e-9);
}
