#include "rlpr/tacma/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>
#include <stdexcept>

#include "rlpr/core/parallel.hpp"

namespace rlpr::tacma {

std::string to_string(Regime r) {
  switch (r) {
    case Regime::frozen_r: return "frozen_r";
    case Regime::frozen_l: return "frozen_l";
    case Regime::both_trainable: return "both_trainable";
  }
  throw std::logic_error("unknown regime");
}

std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::triplet: return "triplet";
    case LossKind::mse: return "mse";
    case LossKind::infonce: return "infonce";
  }
  throw std::logic_error("unknown loss kind");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::no_pretrain: return "no_pretrain";
    case Variant::joint_opt: return "joint_opt";
    case Variant::two_stage: return "two_stage";
  }
  throw std::logic_error("unknown variant");
}

Regime regime_from_string(const std::string& s) {
  if (s == "frozen_r") return Regime::frozen_r;
  if (s == "frozen_l") return Regime::frozen_l;
  if (s == "both_trainable") return Regime::both_trainable;
  throw std::invalid_argument("unknown regime '" + s + "'");
}

LossKind loss_from_string(const std::string& s) {
  if (s == "triplet") return LossKind::triplet;
  if (s == "mse") return LossKind::mse;
  if (s == "infonce") return LossKind::infonce;
  throw std::invalid_argument("unknown loss '" + s + "'");
}

Variant variant_from_string(const std::string& s) {
  if (s == "no_pretrain") return Variant::no_pretrain;
  if (s == "joint_opt") return Variant::joint_opt;
  if (s == "two_stage") return Variant::two_stage;
  throw std::invalid_argument("unknown variant '" + s + "'");
}

void TrainConfig::validate() const {
  arch.validate();
  if (stage1_epochs < 0 || stage2_epochs < 0 || joint_epochs < 0)
    throw std::invalid_argument("train: epoch counts must be >= 0");
  if (stage1_steps_per_epoch < 1 || stage2_steps_per_epoch < 1 || joint_steps_per_epoch < 1)
    throw std::invalid_argument("train: steps per epoch must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning rate must be > 0");
  if (!(lr_decay >= 0.0 && lr_decay < 1.0))
    throw std::invalid_argument("train: lr decay must be in [0, 1)");
  if (!(margin > 0.0)) throw std::invalid_argument("train: margin must be > 0");
  if (negatives < 1) throw std::invalid_argument("train: J must be >= 1");
  if (!(temperature > 0.0)) throw std::invalid_argument("train: temperature must be > 0");
  if (pool_size < negatives) throw std::invalid_argument("train: pool must hold at least J");
  if (probe_pairs < 1 || entropy_bins < 1)
    throw std::invalid_argument("train: probe configuration invalid");
}

double TrainConfig::lr_at(int epoch) const {
  return learning_rate * std::pow(1.0 - lr_decay, epoch);
}

void write_run_log(const std::filesystem::path& path, const RunLog& log) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open run log for writing: " + path.string());
  os << "stage epoch step lr loss loss_local loss_global\n";
  char buf[160];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof(buf), "%s %d %d %.17g %.17g %.17g %.17g\n", e.stage.c_str(), e.epoch,
                  e.step, e.lr, e.loss, e.loss_local, e.loss_global);
    os << buf;
  }
}

const bev::PolarBEV& LoadedDataset::bev(std::uint64_t scan_id) const {
  return bevs.at(slot_of.at(scan_id));
}

const Pose2D& LoadedDataset::pose(std::uint64_t scan_id) const {
  return manifest.scans.at(slot_of.at(scan_id)).pose;
}

std::vector<std::uint64_t> LoadedDataset::train_ids_of(SensorKind kind) const {
  std::vector<std::uint64_t> out;
  for (auto id : manifest.train_ids)
    if (manifest.record(id).sensor == kind) out.push_back(id);
  return out;
}

LoadedDataset load_dataset(const worldgen::DatasetManifest& manifest) {
  LoadedDataset ds;
  ds.manifest = manifest;
  ds.radar_kind = sensor_kind_from_string(manifest.radar_profile);
  const bev::GridSpec spec = bev::grid_for(SensorKind::lidar, ds.radar_kind);
  ds.grid = {spec.h_rng, spec.w_azi};
  ds.bevs.resize(manifest.scans.size());
  for (std::size_t i = 0; i < manifest.scans.size(); ++i)
    ds.slot_of[manifest.scans[i].scan_id] = i;
  parallel_for(manifest.scans.size(), [&](std::size_t i) {
    const auto& rec = manifest.scans[i];
    const auto cloud = worldgen::load_scan(manifest, rec.scan_id);
    ds.bevs[i] = bev::project_polar(cloud, bev::grid_for(rec.sensor, ds.radar_kind));
  });
  return ds;
}

std::vector<std::pair<bev::PolarBEV, bev::PolarBEV>> make_probe_pairs(const LoadedDataset& ds,
                                                                      int count) {
  const std::size_t poses = ds.manifest.scans.size() / 2;
  // Probe over the second half of the trajectory (the query loop).
  const std::size_t lo = poses / 2;
  const std::size_t span = poses - lo;
  const std::size_t take = std::min<std::size_t>(count, span);
  std::vector<std::pair<bev::PolarBEV, bev::PolarBEV>> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t pose_idx = lo + i * span / take;
    out.emplace_back(ds.bev(2 * pose_idx), ds.bev(2 * pose_idx + 1));
  }
  return out;
}

Params init_radar(const TrainConfig& cfg, const net::GridShape& grid) {
  return net::init_params<float>(mix_seeds(cfg.seed, 0x7261ULL), cfg.arch, grid, "radar");
}

Params init_lidar(const TrainConfig& cfg, const net::GridShape& grid) {
  return net::init_params<float>(mix_seeds(cfg.seed, 0x6c69ULL), cfg.arch, grid, "lidar");
}

Adam::Adam(const Params& like) : m(like.zeros_like()), v(like.zeros_like()) {}

void Adam::step(Params& params, const Params& grads, double lr) {
  ++t;
  const float b1 = static_cast<float>(beta1), b2 = static_cast<float>(beta2);
  const float corr1 = 1.0f - std::pow(b1, static_cast<float>(t));
  const float corr2 = 1.0f - std::pow(b2, static_cast<float>(t));
  const float rate = static_cast<float>(lr);
  const float e = static_cast<float>(eps);
  auto pt = params.tensors();
  auto gt = grads.tensors();
  auto mt = m.tensors();
  auto vt = v.tensors();
  for (std::size_t i = 0; i < pt.size(); ++i) {
    auto& p = *pt[i].mat;
    const auto& g = *gt[i].mat;
    auto& mm = *mt[i].mat;
    auto& vv = *vt[i].mat;
    mm = b1 * mm + (1.0f - b1) * g;
    vv = (b2 * vv.array() + (1.0f - b2) * g.array().square()).matrix();
    p.array() -= rate * (mm.array() / corr1) / ((vv.array() / corr2).sqrt() + e);
  }
}

std::uint64_t params_hash(const Params& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto eat = [&h](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& t : params.tensors()) {
    eat(t.name.data(), t.name.size());
    for (Eigen::Index r = 0; r < t.mat->rows(); ++r)
      for (Eigen::Index c = 0; c < t.mat->cols(); ++c) {
        const float v = (*t.mat)(r, c);
        eat(&v, sizeof(v));
      }
  }
  return h;
}

// ---------------------------------------------------------------------------
// Batched forward/backward helpers. Per-item gradient buffers are reduced in
// item order, so results do not depend on RLPR_THREADS.

namespace {

using net::Descriptor;
using net::DescriptorGrad;
using FTrace = net::Trace<float>;

void forward_traced(const LoadedDataset& ds, const std::vector<std::uint64_t>& ids,
                    const Params& params, std::vector<FTrace>& traces,
                    std::vector<Descriptor>& descs) {
  traces.resize(ids.size());
  descs.resize(ids.size());
  parallel_for(ids.size(), [&](std::size_t i) {
    descs[i] = net::forward(ds.bev(ids[i]), params, traces[i]);
  });
}

std::vector<Descriptor> encode_ids(const LoadedDataset& ds, const std::vector<std::uint64_t>& ids,
                                   const Params& params) {
  std::vector<Descriptor> descs(ids.size());
  parallel_for(ids.size(), [&](std::size_t i) {
    descs[i] = net::forward(ds.bev(ids[i]), params);
  });
  return descs;
}

struct BackwardItem {
  const FTrace* trace;
  DescriptorGrad grad;
};

void backward_accumulate(const Params& params, const std::vector<BackwardItem>& items,
                         Params& grads) {
  if (items.empty()) return;
  std::vector<Params> buffers(items.size(), params.zeros_like());
  parallel_for(items.size(), [&](std::size_t i) {
    net::backward(params, *items[i].trace, items[i].grad, buffers[i]);
  });
  auto gt = grads.tensors();
  for (auto& buf : buffers) {
    auto bt = buf.tensors();
    for (std::size_t i = 0; i < gt.size(); ++i) *gt[i].mat += *bt[i].mat;
  }
}

std::vector<std::uint64_t> sample_pool(const std::vector<std::uint64_t>& ids, int pool_size,
                                       Rng& rng) {
  std::vector<std::uint64_t> pool = ids;
  const std::size_t take = std::min<std::size_t>(pool_size, pool.size());
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform_index(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(take);
  return pool;
}

std::vector<objectives::CacheEntry> build_cache(const LoadedDataset& ds,
                                                const std::vector<std::uint64_t>& pool,
                                                const Params& params) {
  const auto descs = encode_ids(ds, pool, params);
  std::vector<objectives::CacheEntry> cache(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i)
    cache[i] = {pool[i], ds.pose(pool[i]), descs[i].d_full};
  return cache;
}

std::vector<objectives::IdPose> id_poses(const LoadedDataset& ds,
                                         const std::vector<std::uint64_t>& ids) {
  std::vector<objectives::IdPose> out(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) out[i] = {ids[i], ds.pose(ids[i])};
  return out;
}

void ensure_finite(double loss, const char* where) {
  if (!std::isfinite(loss))
    throw std::runtime_error(std::string("training aborted: non-finite loss in ") + where);
}

// One modality-specific triplet step. Negatives are re-encoded fresh so the
// hinge sees current descriptors; only the query, the positive and the
// selected negative carry gradient.
double unimodal_triplet_step(const LoadedDataset& ds, const std::vector<std::uint64_t>& ids,
                             const std::vector<objectives::IdPose>& idposes,
                             const std::vector<objectives::CacheEntry>& cache,
                             const Params& params, const TrainConfig& cfg, Rng& rng,
                             Params& grads) {
  const std::uint64_t qid = ids[rng.uniform_index(ids.size())];
  const Pose2D& qpose = ds.pose(qid);
  const std::uint64_t pos_id =
      objectives::sample_positive(qid, qpose, idposes, cfg.positive_radius, rng);

  FTrace q_trace;
  const Descriptor q_desc = net::forward(ds.bev(qid), params, q_trace);
  const auto neg_ids = objectives::mine_hard_negatives(
      qid, q_desc.d_full, qpose, cache, cfg.negatives, cfg.pool_size, cfg.negative_radius, rng);

  std::vector<std::uint64_t> rest;
  rest.push_back(pos_id);
  rest.insert(rest.end(), neg_ids.begin(), neg_ids.end());
  std::vector<FTrace> traces;
  std::vector<Descriptor> descs;
  forward_traced(ds, rest, params, traces, descs);

  objectives::TripletBatch batch;
  batch.query = q_desc.d_full;
  batch.positive = descs[0].d_full;
  for (std::size_t j = 1; j < descs.size(); ++j) batch.negatives.push_back(descs[j].d_full);
  batch.margin = cfg.margin;
  const auto res = objectives::lazy_triplet_loss(batch, cfg.triplet_mode);
  ensure_finite(res.loss, "triplet");

  if (res.loss > 0.0) {
    std::vector<BackwardItem> items;
    items.push_back({&q_trace, DescriptorGrad{VecX(), VecX(), res.d_query}});
    items.push_back({&traces[0], DescriptorGrad{VecX(), VecX(), res.d_positive}});
    items.push_back({&traces[1 + res.selected_negative],
                     DescriptorGrad{VecX(), VecX(), res.d_negatives[res.selected_negative]}});
    backward_accumulate(params, items, grads);
  }
  return res.loss;
}

}  // namespace

Params pretrain_branch(const LoadedDataset& ds, const std::string& branch, const TrainConfig& cfg,
                       const Params& init, RunLog* log) {
  cfg.validate();
  const SensorKind kind = branch == "radar" ? ds.radar_kind : SensorKind::lidar;
  const auto ids = ds.train_ids_of(kind);
  if (static_cast<int>(ids.size()) < cfg.negatives + 2)
    throw std::runtime_error("pretrain: train split too small for J negatives");
  const auto idposes = id_poses(ds, ids);

  Params params = init;
  params.frozen = false;
  Adam adam(params);
  Rng rng(mix_seeds(cfg.seed, branch == "radar" ? 0x533152ULL : 0x53314cULL));
  const std::string stage = "stage1-" + branch;

  for (int epoch = 0; epoch < cfg.stage1_epochs; ++epoch) {
    const double lr = cfg.lr_at(epoch);
    const auto cache = build_cache(ds, sample_pool(ids, cfg.pool_size, rng), params);
    for (int step = 0; step < cfg.stage1_steps_per_epoch; ++step) {
      Params grads = params.zeros_like();
      const double loss =
          unimodal_triplet_step(ds, ids, idposes, cache, params, cfg, rng, grads);
      adam.step(params, grads, lr);
      if (log) log->push_back({stage, epoch, step, lr, loss, 0.0, 0.0});
    }
  }
  return params;
}

// ---------------------------------------------------------------------------
// Stage-2 alignment.

namespace {

// Frozen branches keep their descriptors for the whole stage; cache them once.
struct FrozenCache {
  std::unordered_map<std::uint64_t, Descriptor> by_id;

  static FrozenCache build(const LoadedDataset& ds, const std::vector<std::uint64_t>& ids,
                           const Params& params) {
    FrozenCache cache;
    const auto descs = encode_ids(ds, ids, params);
    for (std::size_t i = 0; i < ids.size(); ++i) cache.by_id[ids[i]] = descs[i];
    return cache;
  }
};

std::vector<std::size_t> sample_distinct(std::size_t n, std::size_t take, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  take = std::min(take, n);
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform_index(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(take);
  return idx;
}

struct PairStepResult {
  double total = 0.0, local = 0.0, global = 0.0;
};

// One InfoNCE/MSE step over N co-located pairs. Trainable sides are encoded
// fresh with traces; frozen sides come from the stage cache.
PairStepResult pair_step(const LoadedDataset& ds, Params& radar, Params& lidar,
                         const FrozenCache* radar_cache, const FrozenCache* lidar_cache,
                         const TrainConfig& cfg, Rng& rng, std::optional<Adam>& adam_r,
                         std::optional<Adam>& adam_l, double lr) {
  const std::size_t pose_count = ds.manifest.scans.size() / 2;
  const auto picks = sample_distinct(pose_count, cfg.batch_size, rng);

  std::vector<std::uint64_t> lidar_ids, radar_ids;
  for (auto i : picks) {
    lidar_ids.push_back(2 * i);
    radar_ids.push_back(2 * i + 1);
  }

  std::vector<FTrace> radar_traces, lidar_traces;
  std::vector<Descriptor> radar_descs, lidar_descs;
  if (radar.frozen) {
    for (auto id : radar_ids) radar_descs.push_back(radar_cache->by_id.at(id));
  } else {
    forward_traced(ds, radar_ids, radar, radar_traces, radar_descs);
  }
  if (lidar.frozen) {
    for (auto id : lidar_ids) lidar_descs.push_back(lidar_cache->by_id.at(id));
  } else {
    forward_traced(ds, lidar_ids, lidar, lidar_traces, lidar_descs);
  }

  objectives::PairBatch batch;
  batch.temperature = cfg.temperature;
  const bool loc = cfg.arch.use_local_head, glob = cfg.arch.use_global_head;
  for (std::size_t i = 0; i < picks.size(); ++i) {
    if (loc) {
      batch.radar_loc.push_back(radar_descs[i].d_loc);
      batch.lidar_loc.push_back(lidar_descs[i].d_loc);
    }
    if (glob) {
      batch.radar_glob.push_back(radar_descs[i].d_glob);
      batch.lidar_glob.push_back(lidar_descs[i].d_glob);
    }
  }

  objectives::PairLossResult res;
  if (cfg.loss == LossKind::mse) {
    res = objectives::mse_loss(batch);
  } else if (cfg.regime == Regime::both_trainable) {
    res = objectives::infonce_loss_symmetric(batch);
  } else {
    res = objectives::infonce_loss(batch);
  }
  ensure_finite(res.total, "alignment");

  auto grads_for = [&](const std::vector<FTrace>& traces, const std::vector<VecX>& d_loc,
                       const std::vector<VecX>& d_glob, const Params& params, Params& grads) {
    std::vector<BackwardItem> items;
    for (std::size_t i = 0; i < traces.size(); ++i) {
      DescriptorGrad dg;
      if (loc) dg.d_loc = d_loc[i];
      if (glob) dg.d_glob = d_glob[i];
      items.push_back({&traces[i], std::move(dg)});
    }
    backward_accumulate(params, items, grads);
  };

  if (!radar.frozen) {
    Params grads = radar.zeros_like();
    grads_for(radar_traces, res.d_radar_loc, res.d_radar_glob, radar, grads);
    adam_r->step(radar, grads, lr);
  }
  if (!lidar.frozen) {
    Params grads = lidar.zeros_like();
    grads_for(lidar_traces, res.d_lidar_loc, res.d_lidar_glob, lidar, grads);
    adam_l->step(lidar, grads, lr);
  }
  return {res.total, res.loss_local, res.loss_global};
}

// Cross-modal triplet on d_full: radar anchor, paired LiDAR positive, mined
// LiDAR negatives; the symmetric form adds the anchor-swapped twin.
double cross_triplet_direction(const LoadedDataset& ds, std::size_t pose_idx, bool radar_anchor,
                               Params& anchor_params, Params& other_params,
                               const std::vector<objectives::CacheEntry>& other_cache,
                               const TrainConfig& cfg, Rng& rng, Params* anchor_grads,
                               Params* other_grads, double weight) {
  const std::uint64_t anchor_id = 2 * pose_idx + (radar_anchor ? 1 : 0);
  const std::uint64_t pos_id = worldgen::paired_scan_id(anchor_id);
  const Pose2D& qpose = ds.pose(anchor_id);

  FTrace anchor_trace;
  const Descriptor anchor_desc = net::forward(ds.bev(anchor_id), anchor_params, anchor_trace);
  const auto neg_ids =
      objectives::mine_hard_negatives(anchor_id, anchor_desc.d_full, qpose, other_cache,
                                      cfg.negatives, cfg.pool_size, cfg.negative_radius, rng);

  std::vector<std::uint64_t> rest;
  rest.push_back(pos_id);
  rest.insert(rest.end(), neg_ids.begin(), neg_ids.end());
  std::vector<FTrace> traces;
  std::vector<Descriptor> descs;
  forward_traced(ds, rest, other_params, traces, descs);

  objectives::TripletBatch batch;
  batch.query = anchor_desc.d_full;
  batch.positive = descs[0].d_full;
  for (std::size_t j = 1; j < descs.size(); ++j) batch.negatives.push_back(descs[j].d_full);
  batch.margin = cfg.margin;
  const auto res = objectives::lazy_triplet_loss(batch, cfg.triplet_mode);
  ensure_finite(res.loss, "cross-modal triplet");

  if (res.loss > 0.0) {
    if (anchor_grads) {
      std::vector<BackwardItem> items;
      items.push_back({&anchor_trace, DescriptorGrad{VecX(), VecX(), weight * res.d_query}});
      backward_accumulate(anchor_params, items, *anchor_grads);
    }
    if (other_grads) {
      std::vector<BackwardItem> items;
      items.push_back({&traces[0], DescriptorGrad{VecX(), VecX(), weight * res.d_positive}});
      items.push_back(
          {&traces[1 + res.selected_negative],
           DescriptorGrad{VecX(), VecX(), weight * res.d_negatives[res.selected_negative]}});
      backward_accumulate(other_params, items, *other_grads);
    }
  }
  return res.loss;
}

}  // namespace

AlignResult align(const Params& radar0, const Params& lidar0, const LoadedDataset& ds,
                  const TrainConfig& cfg) {
  cfg.validate();
  AlignResult out;
  out.radar = radar0;
  out.lidar = lidar0;
  out.radar.frozen = cfg.regime == Regime::frozen_r;
  out.lidar.frozen = cfg.regime == Regime::frozen_l;

  const auto radar_ids = ds.train_ids_of(ds.radar_kind);
  const auto lidar_ids = ds.train_ids_of(SensorKind::lidar);
  if (radar_ids.size() != lidar_ids.size() || radar_ids.empty())
    throw std::runtime_error("align: train split must hold co-located pairs");

  FrozenCache radar_cache, lidar_cache;
  if (out.radar.frozen) radar_cache = FrozenCache::build(ds, radar_ids, out.radar);
  if (out.lidar.frozen) lidar_cache = FrozenCache::build(ds, lidar_ids, out.lidar);

  std::optional<Adam> adam_r, adam_l;
  if (!out.radar.frozen) adam_r.emplace(out.radar);
  if (!out.lidar.frozen) adam_l.emplace(out.lidar);

  Rng rng(mix_seeds(cfg.seed, 0x414c4e32ULL));
  const std::size_t pose_count = ds.manifest.scans.size() / 2;

  for (int epoch = 0; epoch < cfg.stage2_epochs; ++epoch) {
    const double lr = cfg.lr_at(epoch);

    // Triplet alignment mines negatives from the non-anchor modality.
    std::vector<objectives::CacheEntry> lidar_pool, radar_pool;
    if (cfg.loss == LossKind::triplet) {
      lidar_pool = build_cache(ds, sample_pool(lidar_ids, cfg.pool_size, rng), out.lidar);
      if (cfg.regime == Regime::both_trainable)
        radar_pool = build_cache(ds, sample_pool(radar_ids, cfg.pool_size, rng), out.radar);
    }

    for (int step = 0; step < cfg.stage2_steps_per_epoch; ++step) {
      if (cfg.loss == LossKind::triplet) {
        const std::size_t pose_idx = rng.uniform_index(pose_count);
        Params grads_r = out.radar.zeros_like();
        Params grads_l = out.lidar.zeros_like();
        double loss = 0.0;
        if (cfg.regime == Regime::both_trainable) {
          loss += cross_triplet_direction(ds, pose_idx, true, out.radar, out.lidar, lidar_pool,
                                          cfg, rng, &grads_r, &grads_l, 0.5);
          loss += cross_triplet_direction(ds, pose_idx, false, out.lidar, out.radar, radar_pool,
                                          cfg, rng, &grads_l, &grads_r, 0.5);
          loss *= 0.5;
        } else {
          loss += cross_triplet_direction(ds, pose_idx, true, out.radar, out.lidar, lidar_pool,
                                          cfg, rng, out.radar.frozen ? nullptr : &grads_r,
                                          out.lidar.frozen ? nullptr : &grads_l, 1.0);
        }
        if (adam_r) adam_r->step(out.radar, grads_r, lr);
        if (adam_l) adam_l->step(out.lidar, grads_l, lr);
        out.log.push_back({"stage2", epoch, step, lr, loss, 0.0, 0.0});
      } else {
        const auto res = pair_step(ds, out.radar, out.lidar, &radar_cache, &lidar_cache, cfg, rng,
                                   adam_r, adam_l, lr);
        out.log.push_back({"stage2", epoch, step, lr, res.total, res.local, res.global});
      }
    }
  }
  return out;
}

namespace {

AlignResult joint_optimize(const Params& radar0, const Params& lidar0, const LoadedDataset& ds,
                           const TrainConfig& cfg) {
  AlignResult out;
  out.radar = radar0;
  out.lidar = lidar0;
  out.radar.frozen = false;
  out.lidar.frozen = false;

  const auto radar_ids = ds.train_ids_of(ds.radar_kind);
  const auto lidar_ids = ds.train_ids_of(SensorKind::lidar);
  const auto radar_idposes = id_poses(ds, radar_ids);
  const auto lidar_idposes = id_poses(ds, lidar_ids);

  Adam adam_r(out.radar), adam_l(out.lidar);
  Rng rng(mix_seeds(cfg.seed, 0x4a4f494eULL));
  const std::size_t pose_count = ds.manifest.scans.size() / 2;

  // Unimodal and cross-modal losses are optimized simultaneously with equal
  // weights; both branches stay trainable, so the symmetric InfoNCE applies.
  TrainConfig sym = cfg;
  sym.regime = Regime::both_trainable;

  for (int epoch = 0; epoch < cfg.joint_epochs; ++epoch) {
    const double lr = cfg.lr_at(epoch);
    const auto radar_cache = build_cache(ds, sample_pool(radar_ids, cfg.pool_size, rng), out.radar);
    const auto lidar_cache = build_cache(ds, sample_pool(lidar_ids, cfg.pool_size, rng), out.lidar);

    for (int step = 0; step < cfg.joint_steps_per_epoch; ++step) {
      Params grads_r = out.radar.zeros_like();
      Params grads_l = out.lidar.zeros_like();

      const double tri_r = unimodal_triplet_step(ds, radar_ids, radar_idposes, radar_cache,
                                                 out.radar, cfg, rng, grads_r);
      const double tri_l = unimodal_triplet_step(ds, lidar_ids, lidar_idposes, lidar_cache,
                                                 out.lidar, cfg, rng, grads_l);

      // Alignment term over N pairs, gradients joined into the same update.
      const auto picks = sample_distinct(pose_count, cfg.batch_size, rng);
      std::vector<std::uint64_t> step_lidar, step_radar;
      for (auto i : picks) {
        step_lidar.push_back(2 * i);
        step_radar.push_back(2 * i + 1);
      }
      std::vector<FTrace> radar_traces, lidar_traces;
      std::vector<Descriptor> radar_descs, lidar_descs;
      forward_traced(ds, step_radar, out.radar, radar_traces, radar_descs);
      forward_traced(ds, step_lidar, out.lidar, lidar_traces, lidar_descs);

      objectives::PairBatch batch;
      batch.temperature = cfg.temperature;
      const bool loc = cfg.arch.use_local_head, glob = cfg.arch.use_global_head;
      for (std::size_t i = 0; i < picks.size(); ++i) {
        if (loc) {
          batch.radar_loc.push_back(radar_descs[i].d_loc);
          batch.lidar_loc.push_back(lidar_descs[i].d_loc);
        }
        if (glob) {
          batch.radar_glob.push_back(radar_descs[i].d_glob);
          batch.lidar_glob.push_back(lidar_descs[i].d_glob);
        }
      }
      objectives::PairLossResult res = cfg.loss == LossKind::mse
                                           ? objectives::mse_loss(batch)
                                           : objectives::infonce_loss_symmetric(batch);
      ensure_finite(res.total, "joint alignment");

      std::vector<BackwardItem> items_r, items_l;
      for (std::size_t i = 0; i < picks.size(); ++i) {
        DescriptorGrad dg_r, dg_l;
        if (loc) {
          dg_r.d_loc = res.d_radar_loc[i];
          dg_l.d_loc = res.d_lidar_loc[i];
        }
        if (glob) {
          dg_r.d_glob = res.d_radar_glob[i];
          dg_l.d_glob = res.d_lidar_glob[i];
        }
        items_r.push_back({&radar_traces[i], std::move(dg_r)});
        items_l.push_back({&lidar_traces[i], std::move(dg_l)});
      }
      backward_accumulate(out.radar, items_r, grads_r);
      backward_accumulate(out.lidar, items_l, grads_l);

      adam_r.step(out.radar, grads_r, lr);
      adam_l.step(out.lidar, grads_l, lr);

      const double total = tri_r + tri_l + res.total;
      ensure_finite(total, "joint");
      out.log.push_back({"joint", epoch, step, lr, total, res.loss_local, res.loss_global});
    }
  }
  return out;
}

}  // namespace

VariantResult run_variant(Variant variant, const LoadedDataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  VariantResult out;
  Params radar = init_radar(cfg, ds.grid);
  Params lidar = init_lidar(cfg, ds.grid);

  switch (variant) {
    case Variant::two_stage: {
      radar = pretrain_branch(ds, "radar", cfg, radar, &out.log);
      lidar = pretrain_branch(ds, "lidar", cfg, lidar, &out.log);
      auto aligned = align(radar, lidar, ds, cfg);
      out.radar = std::move(aligned.radar);
      out.lidar = std::move(aligned.lidar);
      out.log.insert(out.log.end(), aligned.log.begin(), aligned.log.end());
      out.pretrained = true;
      break;
    }
    case Variant::no_pretrain: {
      auto aligned = align(radar, lidar, ds, cfg);
      out.radar = std::move(aligned.radar);
      out.lidar = std::move(aligned.lidar);
      out.log = std::move(aligned.log);
      break;
    }
    case Variant::joint_opt: {
      auto trained = joint_optimize(radar, lidar, ds, cfg);
      out.radar = std::move(trained.radar);
      out.lidar = std::move(trained.lidar);
      out.log = std::move(trained.log);
      break;
    }
  }

  retrieval::EvalOptions opts;
  opts.mode = retrieval::EvalMode::cross;
  out.metrics = retrieval::evaluate(out.radar, out.lidar, ds.manifest, opts);
  return out;
}

AblationReport run_ablation(const std::vector<std::pair<Regime, LossKind>>& grid,
                            const LoadedDataset& ds, const TrainConfig& cfg) {
  if (grid.empty()) throw std::invalid_argument("run_ablation: empty grid");
  cfg.validate();

  AblationReport report;
  Params radar = pretrain_branch(ds, "radar", cfg, init_radar(cfg, ds.grid), nullptr);
  Params lidar = pretrain_branch(ds, "lidar", cfg, init_lidar(cfg, ds.grid), nullptr);
  report.stage1_radar_hash = params_hash(radar);
  report.stage1_lidar_hash = params_hash(lidar);

  const auto probe = make_probe_pairs(ds, cfg.probe_pairs);
  report.pre_entropy = infometrics::entropy_report(radar, lidar, probe, "post-pretrain",
                                                   cfg.entropy_bins);
  retrieval::EvalOptions uni;
  uni.ks = {1};
  uni.mode = retrieval::EvalMode::rpr;
  report.pre_rpr1 = retrieval::evaluate(radar, lidar, ds.manifest, uni).recall[0];
  uni.mode = retrieval::EvalMode::lpr;
  report.pre_lpr1 = retrieval::evaluate(radar, lidar, ds.manifest, uni).recall[0];

  for (const auto& [regime, loss] : grid) {
    AblationCell cell;
    cell.regime = regime;
    cell.loss = loss;
    try {
      TrainConfig cell_cfg = cfg;
      cell_cfg.regime = regime;
      cell_cfg.loss = loss;
      auto aligned = align(radar, lidar, ds, cell_cfg);

      retrieval::EvalOptions cross;
      cross.ks = {1, 5, 10};
      cell.cross = retrieval::evaluate(aligned.radar, aligned.lidar, ds.manifest, cross);

      retrieval::EvalOptions one;
      one.ks = {1};
      one.mode = retrieval::EvalMode::rpr;
      cell.rpr1 = retrieval::evaluate(aligned.radar, aligned.lidar, ds.manifest, one).recall[0];
      one.mode = retrieval::EvalMode::lpr;
      cell.lpr1 = retrieval::evaluate(aligned.radar, aligned.lidar, ds.manifest, one).recall[0];
      cell.rpr1_delta = cell.rpr1 - report.pre_rpr1;
      cell.lpr1_delta = cell.lpr1 - report.pre_lpr1;
      cell.entropy = infometrics::entropy_report(aligned.radar, aligned.lidar, probe,
                                                 "post-align", cfg.entropy_bins);
    } catch (const std::exception& e) {
      cell.status = e.what();
    }
    report.cells.push_back(std::move(cell));
  }
  return report;
}

}  // namespace rlpr::tacma
