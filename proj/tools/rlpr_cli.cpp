// Command-line front end: dataset generation, TACMA training, retrieval
// evaluation, the ablation grid and the entropy trajectory, with CSV and
// Markdown report emission. Exit codes: 0 success, 1 runtime failure,
// 2 usage/config error.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "rlpr/core/io.hpp"
#include "rlpr/infometrics/entropy.hpp"
#include "rlpr/net/checkpoint.hpp"
#include "rlpr/retrieval/evaluate.hpp"
#include "rlpr/tacma/train.hpp"
#include "rlpr/worldgen/dataset.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rlpr;

namespace {

struct RunConfig {
  worldgen::DatasetConfig dataset;
  tacma::TrainConfig train;
  std::string variant = "two_stage";
  std::vector<int> eval_ks{1, 5, 10, 20};
  double eval_radius = 9.0;
  int snow_clutter = 500;
  double snow_near_bias = 8.0;
};

json arch_to_json(const net::ArchConfig& a) {
  return json{{"patch_rows", a.patch_rows},
              {"patch_cols", a.patch_cols},
              {"embed_dim", a.embed_dim},
              {"pce_hidden", a.pce_hidden},
              {"backbone_c1", a.backbone_c1},
              {"backbone_c2", a.backbone_c2},
              {"attn_dim", a.attn_dim},
              {"attn_heads", a.attn_heads},
              {"attn_ff", a.attn_ff},
              {"attn_layers", a.attn_layers},
              {"positional_encoding", a.positional_encoding},
              {"vlad_clusters", a.vlad_clusters},
              {"descriptor_dim", a.descriptor_dim},
              {"pool", net::to_string(a.pool)},
              {"use_local_head", a.use_local_head},
              {"use_global_head", a.use_global_head},
              {"use_pce", a.use_pce}};
}

void arch_from_json(const json& j, net::ArchConfig& a) {
  a.patch_rows = j.value("patch_rows", a.patch_rows);
  a.patch_cols = j.value("patch_cols", a.patch_cols);
  a.embed_dim = j.value("embed_dim", a.embed_dim);
  a.pce_hidden = j.value("pce_hidden", a.pce_hidden);
  a.backbone_c1 = j.value("backbone_c1", a.backbone_c1);
  a.backbone_c2 = j.value("backbone_c2", a.backbone_c2);
  a.attn_dim = j.value("attn_dim", a.attn_dim);
  a.attn_heads = j.value("attn_heads", a.attn_heads);
  a.attn_ff = j.value("attn_ff", a.attn_ff);
  a.attn_layers = j.value("attn_layers", a.attn_layers);
  a.positional_encoding = j.value("positional_encoding", a.positional_encoding);
  a.vlad_clusters = j.value("vlad_clusters", a.vlad_clusters);
  a.descriptor_dim = j.value("descriptor_dim", a.descriptor_dim);
  if (j.contains("pool")) a.pool = net::pool_from_string(j["pool"].get<std::string>());
  a.use_local_head = j.value("use_local_head", a.use_local_head);
  a.use_global_head = j.value("use_global_head", a.use_global_head);
  a.use_pce = j.value("use_pce", a.use_pce);
}

json config_to_json(const RunConfig& c) {
  json j;
  j["world"] = {{"xmin", c.dataset.world.extent.xmin},
                {"xmax", c.dataset.world.extent.xmax},
                {"ymin", c.dataset.world.extent.ymin},
                {"ymax", c.dataset.world.extent.ymax},
                {"n_segments", c.dataset.world.n_segments},
                {"n_circles", c.dataset.world.n_circles}};
  j["traj"] = {{"loops", c.dataset.traj.loops},
               {"spacing", c.dataset.traj.spacing},
               {"loop_length", c.dataset.traj.loop_length}};
  j["dataset"] = {{"seed", c.dataset.seed},
                  {"radar", to_string(c.dataset.radar_kind)},
                  {"positive_radius", c.dataset.positive_radius}};
  j["arch"] = arch_to_json(c.train.arch);
  j["train"] = {{"stage1_epochs", c.train.stage1_epochs},
                {"stage2_epochs", c.train.stage2_epochs},
                {"joint_epochs", c.train.joint_epochs},
                {"joint_steps_per_epoch", c.train.joint_steps_per_epoch},
                {"stage1_steps_per_epoch", c.train.stage1_steps_per_epoch},
                {"stage2_steps_per_epoch", c.train.stage2_steps_per_epoch},
                {"batch_size", c.train.batch_size},
                {"learning_rate", c.train.learning_rate},
                {"lr_decay", c.train.lr_decay},
                {"margin", c.train.margin},
                {"negatives", c.train.negatives},
                {"temperature", c.train.temperature},
                {"pool_size", c.train.pool_size},
                {"positive_radius", c.train.positive_radius},
                {"negative_radius", c.train.negative_radius},
                {"seed", c.train.seed},
                {"regime", tacma::to_string(c.train.regime)},
                {"loss", tacma::to_string(c.train.loss)},
                {"variant", c.variant},
                {"probe_pairs", c.train.probe_pairs},
                {"entropy_bins", c.train.entropy_bins}};
  j["eval"] = {{"ks", c.eval_ks},
               {"radius", c.eval_radius},
               {"snow_clutter", c.snow_clutter},
               {"snow_near_bias", c.snow_near_bias}};
  return j;
}

void config_from_json(const json& j, RunConfig& c) {
  if (j.contains("world")) {
    const auto& w = j["world"];
    c.dataset.world.extent.xmin = w.value("xmin", c.dataset.world.extent.xmin);
    c.dataset.world.extent.xmax = w.value("xmax", c.dataset.world.extent.xmax);
    c.dataset.world.extent.ymin = w.value("ymin", c.dataset.world.extent.ymin);
    c.dataset.world.extent.ymax = w.value("ymax", c.dataset.world.extent.ymax);
    c.dataset.world.n_segments = w.value("n_segments", c.dataset.world.n_segments);
    c.dataset.world.n_circles = w.value("n_circles", c.dataset.world.n_circles);
  }
  if (j.contains("traj")) {
    const auto& t = j["traj"];
    c.dataset.traj.loops = t.value("loops", c.dataset.traj.loops);
    c.dataset.traj.spacing = t.value("spacing", c.dataset.traj.spacing);
    c.dataset.traj.loop_length = t.value("loop_length", c.dataset.traj.loop_length);
  }
  if (j.contains("dataset")) {
    const auto& d = j["dataset"];
    c.dataset.seed = d.value("seed", c.dataset.seed);
    if (d.contains("radar"))
      c.dataset.radar_kind = sensor_kind_from_string(d["radar"].get<std::string>());
    c.dataset.positive_radius = d.value("positive_radius", c.dataset.positive_radius);
  }
  if (j.contains("arch")) arch_from_json(j["arch"], c.train.arch);
  if (j.contains("train")) {
    const auto& t = j["train"];
    c.train.stage1_epochs = t.value("stage1_epochs", c.train.stage1_epochs);
    c.train.stage2_epochs = t.value("stage2_epochs", c.train.stage2_epochs);
    c.train.joint_epochs = t.value("joint_epochs", c.train.joint_epochs);
    c.train.joint_steps_per_epoch = t.value("joint_steps_per_epoch", c.train.joint_steps_per_epoch);
    c.train.stage1_steps_per_epoch =
        t.value("stage1_steps_per_epoch", c.train.stage1_steps_per_epoch);
    c.train.stage2_steps_per_epoch =
        t.value("stage2_steps_per_epoch", c.train.stage2_steps_per_epoch);
    c.train.batch_size = t.value("batch_size", c.train.batch_size);
    c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
    c.train.lr_decay = t.value("lr_decay", c.train.lr_decay);
    c.train.margin = t.value("margin", c.train.margin);
    c.train.negatives = t.value("negatives", c.train.negatives);
    c.train.temperature = t.value("temperature", c.train.temperature);
    c.train.pool_size = t.value("pool_size", c.train.pool_size);
    c.train.positive_radius = t.value("positive_radius", c.train.positive_radius);
    c.train.negative_radius = t.value("negative_radius", c.train.negative_radius);
    c.train.seed = t.value("seed", c.train.seed);
    if (t.contains("regime"))
      c.train.regime = tacma::regime_from_string(t["regime"].get<std::string>());
    if (t.contains("loss")) c.train.loss = tacma::loss_from_string(t["loss"].get<std::string>());
    c.variant = t.value("variant", c.variant);
    c.train.probe_pairs = t.value("probe_pairs", c.train.probe_pairs);
    c.train.entropy_bins = t.value("entropy_bins", c.train.entropy_bins);
  }
  if (j.contains("eval")) {
    const auto& e = j["eval"];
    if (e.contains("ks")) c.eval_ks = e["ks"].get<std::vector<int>>();
    c.eval_radius = e.value("radius", c.eval_radius);
    c.snow_clutter = e.value("snow_clutter", c.snow_clutter);
    c.snow_near_bias = e.value("snow_near_bias", c.snow_near_bias);
  }
}

RunConfig load_config(const std::string& path) {
  RunConfig cfg;
  if (path.empty()) return cfg;
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot open config file: " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config parse failure: ") + e.what());
  }
  config_from_json(j, cfg);
  return cfg;
}

void persist_config(const RunConfig& cfg, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream os(out_dir / "config.resolved.json", std::ios::trunc);
  os << config_to_json(cfg).dump(2) << "\n";
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

net::GridShape grid_of(const worldgen::DatasetManifest& manifest) {
  const auto spec =
      bev::grid_for(SensorKind::lidar, sensor_kind_from_string(manifest.radar_profile));
  return {spec.h_rng, spec.w_azi};
}

void write_metrics_csv(const fs::path& path, const std::string& mode, bool corrupt,
                       const retrieval::MetricsReport& m) {
  std::ofstream os(path, std::ios::trunc);
  os << "mode,corrupt";
  for (int k : m.ks) os << ",ar@" << k;
  os << ",max_f1,queries,radius\n";
  os << mode << ',' << (corrupt ? "snow" : "none");
  for (double r : m.recall) os << ',' << fmt(r);
  os << ',' << fmt(m.max_f1) << ',' << m.query_count << ',' << fmt(m.success_radius) << "\n";
}

void write_metrics_md(const fs::path& path, const std::string& mode, bool corrupt,
                      const retrieval::MetricsReport& m) {
  std::ofstream os(path, std::ios::trunc);
  os << "| mode | corrupt |";
  for (int k : m.ks) os << " AR@" << k << " |";
  os << " max F1 |\n|---|---|";
  for (std::size_t i = 0; i < m.ks.size(); ++i) os << "---|";
  os << "---|\n| " << mode << " | " << (corrupt ? "snow" : "none") << " |";
  char buf[32];
  for (double r : m.recall) {
    std::snprintf(buf, sizeof(buf), " %.2f |", r);
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), " %.4f |", m.max_f1);
  os << buf << "\n";
}

constexpr const char* kAblationHeader =
    "row,regime,loss,variant,ar@1,ar@5,ar@10,max_f1,rpr@1,rpr_delta,lpr@1,lpr_delta,"
    "h_l,h_r,h_l_given_r,h_r_given_l,h_l_pre,h_r_pre,status";

// ---------------------------------------------------------------------------

int cmd_gen(const RunConfig& cfg, const fs::path& out_dir) {
  persist_config(cfg, out_dir);
  worldgen::build_dataset(cfg.dataset, out_dir);
  std::cout << (out_dir / "manifest.txt").string() << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, const fs::path& manifest_path, const fs::path& out_dir) {
  persist_config(cfg, out_dir);
  const auto manifest = worldgen::read_manifest(manifest_path);
  const auto ds = tacma::load_dataset(manifest);
  const auto variant = tacma::variant_from_string(cfg.variant);

  tacma::RunLog log;
  if (variant == tacma::Variant::two_stage) {
    tacma::Params radar = tacma::pretrain_branch(ds, "radar", cfg.train,
                                                 tacma::init_radar(cfg.train, ds.grid), &log);
    tacma::Params lidar = tacma::pretrain_branch(ds, "lidar", cfg.train,
                                                 tacma::init_lidar(cfg.train, ds.grid), &log);
    net::save_checkpoint(out_dir / "radar-pre.ckpt", radar);
    net::save_checkpoint(out_dir / "lidar-pre.ckpt", lidar);
    auto aligned = tacma::align(radar, lidar, ds, cfg.train);
    log.insert(log.end(), aligned.log.begin(), aligned.log.end());
    if (!aligned.radar.frozen) net::save_checkpoint(out_dir / "radar-aligned.ckpt", aligned.radar);
    if (!aligned.lidar.frozen) net::save_checkpoint(out_dir / "lidar-aligned.ckpt", aligned.lidar);
  } else {
    const auto result = tacma::run_variant(variant, ds, cfg.train);
    log = result.log;
    net::save_checkpoint(out_dir / "radar-aligned.ckpt", result.radar);
    net::save_checkpoint(out_dir / "lidar-aligned.ckpt", result.lidar);
  }
  tacma::write_run_log(out_dir / "run.log", log);
  std::cout << "checkpoints written to " << out_dir.string() << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const fs::path& manifest_path, const fs::path& radar_ckpt,
             const fs::path& lidar_ckpt, const std::string& mode_str, const std::string& corrupt,
             int clutter, const fs::path& out_dir) {
  persist_config(cfg, out_dir);
  if (!corrupt.empty() && corrupt != "snow")
    throw std::invalid_argument("unknown corruption '" + corrupt + "' (expected snow)");
  const auto manifest = worldgen::read_manifest(manifest_path);
  const auto grid = grid_of(manifest);

  const auto radar = net::load_checkpoint<float>(radar_ckpt, cfg.train.arch, grid, "radar");
  const auto lidar = net::load_checkpoint<float>(lidar_ckpt, cfg.train.arch, grid, "lidar");

  retrieval::EvalOptions opts;
  opts.mode = retrieval::eval_mode_from_string(mode_str);
  opts.ks = cfg.eval_ks;
  opts.radius = cfg.eval_radius;
  opts.corrupt_snow = corrupt == "snow";
  opts.snow_clutter = clutter >= 0 ? clutter : cfg.snow_clutter;
  opts.snow_near_bias = cfg.snow_near_bias;
  opts.snow_seed = cfg.train.seed;

  const auto metrics = retrieval::evaluate(radar, lidar, manifest, opts);
  write_metrics_csv(out_dir / "metrics.csv", mode_str, opts.corrupt_snow, metrics);
  write_metrics_md(out_dir / "metrics.md", mode_str, opts.corrupt_snow, metrics);
  std::cout << slurp(out_dir / "metrics.md");
  return 0;
}

int cmd_ablate(const RunConfig& cfg, const fs::path& manifest_path, const fs::path& out_dir) {
  persist_config(cfg, out_dir);
  const auto manifest = worldgen::read_manifest(manifest_path);
  const auto ds = tacma::load_dataset(manifest);

  std::vector<std::pair<tacma::Regime, tacma::LossKind>> grid;
  for (auto r : {tacma::Regime::frozen_l, tacma::Regime::both_trainable, tacma::Regime::frozen_r})
    for (auto l : {tacma::LossKind::triplet, tacma::LossKind::mse, tacma::LossKind::infonce})
      grid.push_back({r, l});

  const auto report = tacma::run_ablation(grid, ds, cfg.train);

  std::ofstream csv(out_dir / "ablation.csv", std::ios::trunc);
  std::ofstream md(out_dir / "ablation.md", std::ios::trunc);
  csv << kAblationHeader << "\n";
  md << "| row | regime | loss | variant | AR@1 | AR@5 | AR@10 | max F1 | RPR@1 (d) | LPR@1 (d) "
        "| H(L) | H(R) |\n|---|---|---|---|---|---|---|---|---|---|---|---|\n";

  bool any_failed = false;
  for (const auto& cell : report.cells) {
    any_failed = any_failed || cell.status != "ok";
    csv << "cell," << tacma::to_string(cell.regime) << ',' << tacma::to_string(cell.loss) << ",,";
    if (cell.status == "ok") {
      csv << fmt(cell.cross.recall[0]) << ',' << fmt(cell.cross.recall[1]) << ','
          << fmt(cell.cross.recall[2]) << ',' << fmt(cell.cross.max_f1) << ',' << fmt(cell.rpr1)
          << ',' << fmt(cell.rpr1_delta) << ',' << fmt(cell.lpr1) << ',' << fmt(cell.lpr1_delta)
          << ',' << fmt(cell.entropy.h_l) << ',' << fmt(cell.entropy.h_r) << ','
          << fmt(cell.entropy.h_l_given_r) << ',' << fmt(cell.entropy.h_r_given_l) << ','
          << fmt(report.pre_entropy.h_l) << ',' << fmt(report.pre_entropy.h_r) << ",ok\n";
      char row[256];
      std::snprintf(row, sizeof(row),
                    "| cell | %s | %s | | %.2f | %.2f | %.2f | %.4f | %.2f (%+.2f) | %.2f (%+.2f) "
                    "| %.4f | %.4f |\n",
                    tacma::to_string(cell.regime).c_str(), tacma::to_string(cell.loss).c_str(),
                    cell.cross.recall[0], cell.cross.recall[1], cell.cross.recall[2],
                    cell.cross.max_f1, cell.rpr1, cell.rpr1_delta, cell.lpr1, cell.lpr1_delta,
                    cell.entropy.h_l, cell.entropy.h_r);
      md << row;
    } else {
      csv << ",,,,,,,,,,,,,," << '"' << cell.status << "\"\n";
      md << "| cell | " << tacma::to_string(cell.regime) << " | " << tacma::to_string(cell.loss)
         << " | | failed |  |  |  |  |  |  |  |\n";
    }
  }

  for (auto variant :
       {tacma::Variant::no_pretrain, tacma::Variant::joint_opt, tacma::Variant::two_stage}) {
    const auto res = tacma::run_variant(variant, ds, cfg.train);
    csv << "variant,,," << tacma::to_string(variant) << ',' << fmt(res.metrics.recall[0]) << ','
        << fmt(res.metrics.recall[1]) << ',' << fmt(res.metrics.recall[2]) << ','
        << fmt(res.metrics.max_f1) << ",,,,,,,,,,,ok\n";
    char row[160];
    std::snprintf(row, sizeof(row),
                  "| variant |  |  | %s | %.2f | %.2f | %.2f | %.4f |  |  |  |  |\n",
                  tacma::to_string(variant).c_str(), res.metrics.recall[0], res.metrics.recall[1],
                  res.metrics.recall[2], res.metrics.max_f1);
    md << row;
  }

  std::cout << "ablation report written to " << (out_dir / "ablation.csv").string() << "\n";
  return any_failed ? 1 : 0;
}

int cmd_entropy(const RunConfig& cfg, const fs::path& manifest_path, const fs::path& ckpt_dir,
                const std::vector<std::string>& phases, bool sanity_identical,
                const fs::path& out_dir) {
  persist_config(cfg, out_dir);
  const auto manifest = worldgen::read_manifest(manifest_path);
  const auto ds = tacma::load_dataset(manifest);
  const auto probe = tacma::make_probe_pairs(ds, cfg.train.probe_pairs);

  auto load_pair = [&](const std::string& phase) {
    if (phase == "init")
      return std::pair{tacma::init_radar(cfg.train, ds.grid),
                       tacma::init_lidar(cfg.train, ds.grid)};
    if (phase == "post-pretrain")
      return std::pair{net::load_checkpoint<float>(ckpt_dir / "radar-pre.ckpt", cfg.train.arch,
                                                   ds.grid, "radar"),
                       net::load_checkpoint<float>(ckpt_dir / "lidar-pre.ckpt", cfg.train.arch,
                                                   ds.grid, "lidar")};
    if (phase == "post-align") {
      // A frozen branch has no -aligned file; its stage-1 checkpoint is the
      // aligned state.
      const auto pick = [&](const std::string& branch) {
        const auto aligned = ckpt_dir / (branch + "-aligned.ckpt");
        const auto pre = ckpt_dir / (branch + "-pre.ckpt");
        return net::load_checkpoint<float>(fs::exists(aligned) ? aligned : pre, cfg.train.arch,
                                           ds.grid, branch);
      };
      return std::pair{pick("radar"), pick("lidar")};
    }
    throw std::invalid_argument("unknown phase '" + phase +
                                "' (expected init, post-pretrain or post-align)");
  };

  std::ofstream csv(out_dir / "entropy.csv", std::ios::trunc);
  csv << "phase,h_l,h_r,h_l_given_r,h_r_given_l,bins,pairs,h_r_gt_h_l\n";
  auto write_row = [&](const infometrics::EntropyReport& rep) {
    csv << rep.phase << ',' << fmt(rep.h_l) << ',' << fmt(rep.h_r) << ',' << fmt(rep.h_l_given_r)
        << ',' << fmt(rep.h_r_given_l) << ',' << rep.bins << ',' << rep.pairs << ','
        << (rep.h_r > rep.h_l ? "yes" : "no") << "\n";
  };
  std::optional<bool> reversal;
  for (const auto& phase : phases) {
    const auto [radar, lidar] = load_pair(phase);
    const auto rep =
        infometrics::entropy_report(radar, lidar, probe, phase, cfg.train.entropy_bins);
    write_row(rep);
    if (phase == "post-pretrain") reversal = rep.h_r > rep.h_l;
  }
  if (sanity_identical) {
    // One branch on duplicated inputs: a known-answer row with H(L|R) = 0.
    const auto lidar = tacma::init_lidar(cfg.train, ds.grid);
    std::vector<std::pair<bev::PolarBEV, bev::PolarBEV>> twins;
    for (const auto& [lidar_bev, radar_bev] : probe) twins.emplace_back(lidar_bev, lidar_bev);
    write_row(infometrics::entropy_report(lidar, lidar, twins, "sanity-identical",
                                          cfg.train.entropy_bins));
  }
  // The marginal-entropy reversal is an empirical claim about real sensor
  // data; it is reported here, never asserted.
  if (reversal.has_value())
    std::cout << "marginal-entropy reversal after pre-training (H(R) > H(L)): "
              << (*reversal ? "yes" : "no") << " [reported, not asserted]\n";
  std::cout << "entropy report written to " << (out_dir / "entropy.csv").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  if (!io::host_is_little_endian()) {
    std::cerr << "rlpr requires a little-endian host\n";
    return 1;
  }

  CLI::App app{"RLPR: radar-to-LiDAR place recognition laboratory"};
  app.require_subcommand(1);

  std::string config_path, manifest_path, out_dir = "out";
  std::string radar_kind, mode = "cross", corrupt, variant, regime, loss;
  std::string radar_ckpt, lidar_ckpt, ckpt_dir;
  std::vector<std::string> phases{"init", "post-pretrain", "post-align"};
  std::int64_t seed = -1;
  int clutter = -1;
  std::optional<int> stage1_epochs, stage2_epochs;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON configuration file");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--seed", seed, "override the run seed");
  };

  auto* gen = app.add_subcommand("gen", "generate a synthetic paired dataset");
  add_common(gen);
  gen->add_option("--radar", radar_kind,
                  "radar profile: scanning_radar|single_chip_radar|radar_4d");

  auto* train = app.add_subcommand("train", "run the TACMA training protocol");
  add_common(train);
  train->add_option("--manifest", manifest_path, "dataset manifest")->required();
  train->add_option("--variant", variant, "two_stage|no_pretrain|joint_opt");
  train->add_option("--regime", regime, "frozen_r|frozen_l|both_trainable");
  train->add_option("--loss", loss, "infonce|mse|triplet");
  train->add_option("--stage1-epochs", stage1_epochs, "override stage-1 epochs");
  train->add_option("--stage2-epochs", stage2_epochs, "override stage-2 epochs");

  auto* eval = app.add_subcommand("eval", "evaluate retrieval metrics");
  add_common(eval);
  eval->add_option("--manifest", manifest_path, "dataset manifest")->required();
  eval->add_option("--radar-ckpt", radar_ckpt, "radar branch checkpoint")->required();
  eval->add_option("--lidar-ckpt", lidar_ckpt, "lidar branch checkpoint")->required();
  eval->add_option("--mode", mode, "cross|rpr|lpr");
  eval->add_option("--corrupt", corrupt, "apply a corruption to LiDAR queries (snow)");
  eval->add_option("--clutter", clutter, "snow clutter points per scan");

  auto* ablate = app.add_subcommand("ablate", "run the regime x loss grid and variants");
  add_common(ablate);
  ablate->add_option("--manifest", manifest_path, "dataset manifest")->required();

  bool sanity_identical = false;
  auto* entropy = app.add_subcommand("entropy", "entropy trajectory across training phases");
  add_common(entropy);
  entropy->add_option("--manifest", manifest_path, "dataset manifest")->required();
  entropy->add_option("--ckpt-dir", ckpt_dir, "directory holding training checkpoints");
  entropy->add_option("--phases", phases, "subset of init, post-pretrain, post-align");
  entropy->add_flag("--sanity-identical", sanity_identical,
                    "append a known-answer row: one branch on duplicated inputs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    RunConfig cfg = load_config(config_path);
    if (seed >= 0) {
      cfg.dataset.seed = static_cast<std::uint64_t>(seed);
      cfg.train.seed = static_cast<std::uint64_t>(seed);
    }
    if (!radar_kind.empty()) cfg.dataset.radar_kind = sensor_kind_from_string(radar_kind);
    if (!variant.empty()) cfg.variant = tacma::to_string(tacma::variant_from_string(variant));
    if (!regime.empty()) cfg.train.regime = tacma::regime_from_string(regime);
    if (!loss.empty()) cfg.train.loss = tacma::loss_from_string(loss);
    if (stage1_epochs) cfg.train.stage1_epochs = *stage1_epochs;
    if (stage2_epochs) cfg.train.stage2_epochs = *stage2_epochs;

    if (gen->parsed()) return cmd_gen(cfg, out_dir);
    if (train->parsed()) return cmd_train(cfg, manifest_path, out_dir);
    if (eval->parsed())
      return cmd_eval(cfg, manifest_path, radar_ckpt, lidar_ckpt, mode, corrupt, clutter, out_dir);
    if (ablate->parsed()) return cmd_ablate(cfg, manifest_path, out_dir);
    if (entropy->parsed())
      return cmd_entropy(cfg, manifest_path, ckpt_dir, phases, sanity_identical, out_dir);
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
