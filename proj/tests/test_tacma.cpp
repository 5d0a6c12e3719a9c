#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rlpr/net/checkpoint.hpp"
#include "rlpr/tacma/train.hpp"
#include "test_util.hpp"

using namespace rlpr;
using namespace rlpr::tacma;

namespace {

// Small dataset + small encoder so training-loop contracts run in seconds.
struct Fixture {
  testutil::TempDir tmp{"tacma"};
  LoadedDataset ds;
  TrainConfig cfg;

  Fixture() {
    worldgen::DatasetConfig dcfg;
    dcfg.seed = 0;
    dcfg.traj.loop_length = 100.0;  // 50 poses per loop
    dcfg.world.extent = {-60, 60, -60, 60};
    dcfg.radar_kind = SensorKind::single_chip_radar;
    const auto manifest = worldgen::build_dataset(dcfg, tmp.path() / "data");
    ds = load_dataset(manifest);

    cfg.arch.patch_rows = 5;
    cfg.arch.patch_cols = 5;
    cfg.arch.embed_dim = 4;
    cfg.arch.pce_hidden = 4;
    cfg.arch.backbone_c1 = 4;
    cfg.arch.backbone_c2 = 8;
    cfg.arch.attn_dim = 8;
    cfg.arch.attn_heads = 2;
    cfg.arch.attn_ff = 12;
    cfg.arch.vlad_clusters = 3;
    cfg.arch.descriptor_dim = 16;
    cfg.stage1_epochs = 2;
    cfg.stage2_epochs = 2;
    cfg.joint_epochs = 2;
    cfg.stage1_steps_per_epoch = 4;
    cfg.stage2_steps_per_epoch = 4;
    cfg.joint_steps_per_epoch = 4;
    cfg.batch_size = 4;
    cfg.negatives = 3;
    cfg.pool_size = 24;
    cfg.probe_pairs = 8;
    cfg.seed = 0;
  }
};

}  // namespace

TEST_CASE("loaded dataset indexes scans and splits by modality") {
  Fixture f;
  CHECK(f.ds.bevs.size() == 200);
  CHECK(f.ds.train_ids_of(SensorKind::lidar).size() == 100);
  CHECK(f.ds.train_ids_of(SensorKind::single_chip_radar).size() == 100);
  CHECK(f.ds.grid.rows == 50);
  CHECK(f.ds.grid.cols == 225);
  const auto& bev = f.ds.bev(0);
  CHECK(bev.cells.rows() == 50);
  CHECK(bev.cells.cols() == 225);
}

TEST_CASE("learning-rate schedule is exactly 5e-5 * 0.8^e") {
  TrainConfig cfg;
  for (int e = 0; e < 8; ++e) CHECK(cfg.lr_at(e) == 5e-5 * std::pow(0.8, e));
}

TEST_CASE("zero pre-training epochs is a no-op") {
  Fixture f;
  f.cfg.stage1_epochs = 0;
  const Params init = init_radar(f.cfg, f.ds.grid);
  RunLog log;
  const Params out = pretrain_branch(f.ds, "radar", f.cfg, init, &log);
  CHECK(params_hash(out) == params_hash(init));
  CHECK(log.empty());
}

TEST_CASE("pretraining logs epochs x steps entries and is deterministic") {
  Fixture f;
  const Params init = init_radar(f.cfg, f.ds.grid);
  RunLog log;
  const Params a = pretrain_branch(f.ds, "radar", f.cfg, init, &log);
  CHECK(log.size() == 2 * 4);
  for (const auto& e : log) {
    CHECK(e.stage == "stage1-radar");
    CHECK(std::isfinite(e.loss));
    CHECK(e.lr == f.cfg.lr_at(e.epoch));
  }

  RunLog log2;
  const Params b = pretrain_branch(f.ds, "radar", f.cfg, init, &log2);
  CHECK(params_hash(a) == params_hash(b));
  for (std::size_t i = 0; i < log.size(); ++i) CHECK(log[i].loss == log2[i].loss);
  CHECK(params_hash(a) != params_hash(init));
}

TEST_CASE("seeded regression: later epochs improve the triplet loss") {
  Fixture f;
  f.cfg.stage1_epochs = 3;
  f.cfg.stage1_steps_per_epoch = 10;
  f.cfg.learning_rate = 2e-3;  // tiny encoder on a tiny set needs a visible step
  RunLog log;
  pretrain_branch(f.ds, "radar", f.cfg, init_radar(f.cfg, f.ds.grid), &log);
  auto epoch_mean = [&](int epoch) {
    double sum = 0;
    int n = 0;
    for (const auto& e : log)
      if (e.epoch == epoch) {
        sum += e.loss;
        ++n;
      }
    return sum / n;
  };
  CHECK(epoch_mean(2) < epoch_mean(0));
}

TEST_CASE("align freeze contracts") {
  Fixture f;
  const Params radar = init_radar(f.cfg, f.ds.grid);
  const Params lidar = init_lidar(f.cfg, f.ds.grid);

  SUBCASE("frozen radar branch is bit-identical after alignment") {
    f.cfg.regime = Regime::frozen_r;
    f.cfg.loss = LossKind::infonce;
    const auto res = align(radar, lidar, f.ds, f.cfg);
    CHECK(params_hash(res.radar) == params_hash(radar));
    CHECK(params_hash(res.lidar) != params_hash(lidar));
    CHECK(res.log.size() == 2 * 4);

    // Frozen branch descriptors are bit-identical on any probe input.
    const auto d0 = net::forward(f.ds.bev(1), radar).d_full;
    const auto d1 = net::forward(f.ds.bev(1), res.radar).d_full;
    CHECK((d0 - d1).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("frozen lidar branch is bit-identical after alignment") {
    f.cfg.regime = Regime::frozen_l;
    f.cfg.loss = LossKind::mse;
    const auto res = align(radar, lidar, f.ds, f.cfg);
    CHECK(params_hash(res.lidar) == params_hash(lidar));
    CHECK(params_hash(res.radar) != params_hash(radar));
  }
  SUBCASE("both trainable with the symmetric loss moves both branches") {
    f.cfg.regime = Regime::both_trainable;
    f.cfg.loss = LossKind::infonce;
    f.cfg.stage2_epochs = 1;
    f.cfg.stage2_steps_per_epoch = 1;  // one step suffices to move both
    const auto res = align(radar, lidar, f.ds, f.cfg);
    CHECK(params_hash(res.radar) != params_hash(radar));
    CHECK(params_hash(res.lidar) != params_hash(lidar));
  }
  SUBCASE("triplet alignment trains under every regime") {
    f.cfg.loss = LossKind::triplet;
    f.cfg.stage2_epochs = 1;
    for (auto regime : {Regime::frozen_r, Regime::frozen_l, Regime::both_trainable}) {
      f.cfg.regime = regime;
      const auto res = align(radar, lidar, f.ds, f.cfg);
      if (regime == Regime::frozen_r) CHECK(params_hash(res.radar) == params_hash(radar));
      if (regime == Regime::frozen_l) CHECK(params_hash(res.lidar) == params_hash(lidar));
      for (const auto& e : res.log) CHECK(std::isfinite(e.loss));
    }
  }
}

TEST_CASE("seeded regression: alignment reduces the InfoNCE loss") {
  Fixture f;
  f.cfg.regime = Regime::frozen_r;
  f.cfg.loss = LossKind::infonce;
  f.cfg.stage2_epochs = 3;
  f.cfg.stage2_steps_per_epoch = 10;
  f.cfg.learning_rate = 2e-3;
  const auto res = align(init_radar(f.cfg, f.ds.grid), init_lidar(f.cfg, f.ds.grid), f.ds, f.cfg);
  double first = 0, last = 0;
  const int n = f.cfg.stage2_steps_per_epoch;
  for (int i = 0; i < n; ++i) first += res.log[i].loss / n;
  for (std::size_t i = res.log.size() - n; i < res.log.size(); ++i) last += res.log[i].loss / n;
  CHECK(last < first);
}

TEST_CASE("run_variant two_stage composes pretrain and align exactly") {
  Fixture f;
  const auto var = run_variant(Variant::two_stage, f.ds, f.cfg);

  Params radar = pretrain_branch(f.ds, "radar", f.cfg, init_radar(f.cfg, f.ds.grid), nullptr);
  Params lidar = pretrain_branch(f.ds, "lidar", f.cfg, init_lidar(f.cfg, f.ds.grid), nullptr);
  const auto aligned = align(radar, lidar, f.ds, f.cfg);
  CHECK(params_hash(var.radar) == params_hash(aligned.radar));
  CHECK(params_hash(var.lidar) == params_hash(aligned.lidar));

  CHECK(var.metrics.ks == std::vector<int>{1, 5, 10, 20});
  for (std::size_t i = 1; i < var.metrics.recall.size(); ++i)
    CHECK(var.metrics.recall[i] >= var.metrics.recall[i - 1]);
}

TEST_CASE("run_variant no_pretrain skips stage one") {
  Fixture f;
  f.cfg.stage2_epochs = 1;
  const auto var = run_variant(Variant::no_pretrain, f.ds, f.cfg);
  CHECK(!var.pretrained);
  // Radar stays at init under the default frozen_r regime.
  CHECK(params_hash(var.radar) == params_hash(init_radar(f.cfg, f.ds.grid)));
}

TEST_CASE("run_variant joint_opt trains both branches and logs the joint stage") {
  Fixture f;
  f.cfg.joint_epochs = 1;
  f.cfg.joint_steps_per_epoch = 2;
  const auto var = run_variant(Variant::joint_opt, f.ds, f.cfg);
  CHECK(params_hash(var.radar) != params_hash(init_radar(f.cfg, f.ds.grid)));
  CHECK(params_hash(var.lidar) != params_hash(init_lidar(f.cfg, f.ds.grid)));
  CHECK(var.log.size() == 2);
  CHECK(var.log[0].stage == "joint");
}

TEST_CASE("run_ablation shares stage-1 checkpoints and reports the grid") {
  Fixture f;
  f.cfg.stage1_epochs = 1;
  f.cfg.stage2_epochs = 1;
  f.cfg.stage1_steps_per_epoch = 2;
  f.cfg.stage2_steps_per_epoch = 2;
  f.cfg.probe_pairs = 6;

  std::vector<std::pair<Regime, LossKind>> grid;
  for (auto r : {Regime::frozen_l, Regime::both_trainable, Regime::frozen_r})
    for (auto l : {LossKind::triplet, LossKind::mse, LossKind::infonce}) grid.push_back({r, l});

  const auto report = run_ablation(grid, f.ds, f.cfg);
  CHECK(report.cells.size() == 9);

  // Stage-1 sharing witness: identical hashes across the whole grid run.
  Params radar = pretrain_branch(f.ds, "radar", f.cfg, init_radar(f.cfg, f.ds.grid), nullptr);
  CHECK(report.stage1_radar_hash == params_hash(radar));

  for (const auto& cell : report.cells) {
    CHECK(cell.status == "ok");
    if (cell.regime == Regime::frozen_r) CHECK(cell.rpr1_delta == 0.0);
    if (cell.regime == Regime::frozen_l) CHECK(cell.lpr1_delta == 0.0);
    // Chain rule holds on every reported entropy row.
    CHECK(std::abs(cell.entropy.h_l_given_r + cell.entropy.h_r -
                   (cell.entropy.h_r_given_l + cell.entropy.h_l)) < 1e-9);
    CHECK(cell.entropy.h_l <= std::log(10.0) + 1e-12);
  }
  CHECK(report.pre_entropy.phase == "post-pretrain");
}

TEST_CASE("run log file round trip") {
  Fixture f;
  testutil::TempDir tmp("runlog");
  RunLog log;
  log.push_back({"stage1-radar", 0, 0, 5e-5, 0.125, 0.0, 0.0});
  log.push_back({"stage2", 1, 3, 4e-5, 0.5, 0.25, 0.25});
  const auto path = tmp.path() / "run.log";
  write_run_log(path, log);
  const auto text = testutil::read_text(path);
  CHECK(text.find("stage epoch step lr loss loss_local loss_global") == 0);
  CHECK(text.find("stage2 1 3") != std::string::npos);
}

TEST_CASE("checkpoint round trip reproduces training state bit-exactly") {
  Fixture f;
  testutil::TempDir tmp("ckpt2");
  const Params trained =
      pretrain_branch(f.ds, "radar", f.cfg, init_radar(f.cfg, f.ds.grid), nullptr);
  const auto path = tmp.path() / "radar.ckpt";
  net::save_checkpoint(path, trained);
  const auto loaded = net::load_checkpoint<float>(path, f.cfg.arch, f.ds.grid, "radar");
  CHECK(params_hash(loaded) == params_hash(trained));
  const auto d0 = net::forward(f.ds.bev(5), trained).d_full;
  const auto d1 = net::forward(f.ds.bev(5), loaded).d_full;
  CHECK((d0 - d1).cwiseAbs().maxCoeff() == 0.0);
}
