#include "rlpr/retrieval/index.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

#include "rlpr/core/io.hpp"
#include "rlpr/retrieval/evaluate.hpp"

namespace rlpr::retrieval {

EvalMode eval_mode_from_string(const std::string& s) {
  if (s == "cross") return EvalMode::cross;
  if (s == "rpr") return EvalMode::rpr;
  if (s == "lpr") return EvalMode::lpr;
  throw std::invalid_argument("unknown eval mode '" + s + "' (expected cross, rpr or lpr)");
}

std::string to_string(EvalMode m) {
  switch (m) {
    case EvalMode::cross: return "cross";
    case EvalMode::rpr: return "rpr";
    case EvalMode::lpr: return "lpr";
  }
  throw std::logic_error("unknown eval mode");
}

namespace {
constexpr char kStoreMagic[9] = "RLPRDESC";
constexpr std::uint16_t kStoreVersion = 1;

double f32(double v) { return static_cast<double>(static_cast<float>(v)); }
}  // namespace

DescriptorIndex build_index(const MatX& descriptors, const std::vector<Pose2D>& poses,
                            const std::vector<std::uint64_t>& ids) {
  const std::size_t n = ids.size();
  if (poses.size() != n || static_cast<std::size_t>(descriptors.rows()) != n)
    throw std::invalid_argument("build_index: ids/poses/descriptor row counts differ");
  if (n == 0) throw std::invalid_argument("build_index: empty index");
  std::set<std::uint64_t> unique(ids.begin(), ids.end());
  if (unique.size() != n) throw std::invalid_argument("build_index: duplicate ids");

  DescriptorIndex index;
  index.ids = ids;
  index.dim = static_cast<int>(descriptors.cols());
  index.descriptors = descriptors.unaryExpr([](double v) { return f32(v); });
  index.poses.reserve(n);
  for (const auto& p : poses) index.poses.push_back({f32(p.x), f32(p.y), f32(p.yaw)});

  for (std::size_t r = 0; r < n; ++r) {
    const double norm = index.descriptors.row(r).norm();
    if (std::abs(norm - 1.0) > 1e-5)
      throw std::invalid_argument("build_index: row " + std::to_string(r) +
                                  " is not unit-norm (|" + std::to_string(norm) + "| - 1 > 1e-5)");
  }
  return index;
}

std::vector<std::pair<std::uint64_t, double>> query_topk(const DescriptorIndex& index,
                                                         const VecX& query, int k) {
  if (k < 1) throw std::invalid_argument("query_topk: K must be >= 1");
  if (query.size() != index.dim) throw std::invalid_argument("query_topk: dimension mismatch");
  const VecX sims = index.descriptors * query;

  std::vector<std::size_t> order(index.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (sims(a) != sims(b)) return sims(a) > sims(b);
    return index.ids[a] < index.ids[b];
  });

  const std::size_t take = std::min<std::size_t>(k, order.size());
  std::vector<std::pair<std::uint64_t, double>> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.emplace_back(index.ids[order[i]], sims(order[i]));
  return out;
}

namespace {

void check_protocol(const DescriptorIndex& index, const QueryItem& q, double radius) {
  for (const auto& pose : index.poses)
    if (pose_distance(pose, q.pose) <= radius) return;
  throw std::runtime_error("retrieval: query " + std::to_string(q.id) +
                           " has no database entry within " + std::to_string(radius) + " m");
}

const Pose2D& pose_of(const DescriptorIndex& index, std::uint64_t id) {
  for (std::size_t i = 0; i < index.ids.size(); ++i)
    if (index.ids[i] == id) return index.poses[i];
  throw std::logic_error("retrieval: id not in index");
}

}  // namespace

double recall_at_k(const DescriptorIndex& index, const std::vector<QueryItem>& queries, int k,
                   double radius) {
  if (queries.empty()) throw std::invalid_argument("recall_at_k: no queries");
  std::size_t hits = 0;
  for (const auto& q : queries) {
    check_protocol(index, q, radius);
    for (const auto& [id, sim] : query_topk(index, q.descriptor, k)) {
      if (pose_distance(pose_of(index, id), q.pose) <= radius) {
        ++hits;
        break;
      }
    }
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(queries.size());
}

double max_f1(const DescriptorIndex& index, const std::vector<QueryItem>& queries, double radius) {
  if (queries.empty()) throw std::invalid_argument("max_f1: no queries");
  std::vector<std::pair<double, bool>> top1;  // (similarity, correct)
  top1.reserve(queries.size());
  for (const auto& q : queries) {
    check_protocol(index, q, radius);
    const auto ranked = query_topk(index, q.descriptor, 1);
    const bool correct = pose_distance(pose_of(index, ranked[0].first), q.pose) <= radius;
    top1.emplace_back(ranked[0].second, correct);
  }

  double best = 0.0;
  for (const auto& [threshold, unused] : top1) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (const auto& [sim, correct] : top1) {
      const bool accepted = sim >= threshold;
      if (accepted && correct) ++tp;
      else if (accepted && !correct) ++fp;
      else if (!accepted && correct) ++fn;
    }
    const double denom = static_cast<double>(2 * tp + fp + fn);
    const double f1 = denom > 0.0 ? 2.0 * static_cast<double>(tp) / denom : 0.0;
    best = std::max(best, f1);
  }
  return best;
}

MetricsReport compute_metrics(const DescriptorIndex& index, const std::vector<QueryItem>& queries,
                              const std::vector<int>& ks, double radius) {
  MetricsReport report;
  report.ks = ks;
  report.query_count = queries.size();
  report.success_radius = radius;
  for (int k : ks) report.recall.push_back(recall_at_k(index, queries, k, radius));
  report.max_f1 = max_f1(index, queries, radius);
  return report;
}

void save_store(const std::filesystem::path& path, const DescriptorIndex& index) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open store for writing: " + path.string());
  io::write_magic(os, kStoreMagic);
  io::write_pod<std::uint16_t>(os, kStoreVersion);
  io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(index.size()));
  io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(index.dim));
  for (auto id : index.ids) io::write_pod<std::uint64_t>(os, id);
  for (const auto& p : index.poses) {
    io::write_pod<float>(os, static_cast<float>(p.x));
    io::write_pod<float>(os, static_cast<float>(p.y));
    io::write_pod<float>(os, static_cast<float>(p.yaw));
  }
  for (Eigen::Index r = 0; r < index.descriptors.rows(); ++r)
    for (Eigen::Index c = 0; c < index.descriptors.cols(); ++c)
      io::write_pod<float>(os, static_cast<float>(index.descriptors(r, c)));
  if (!os) throw std::runtime_error("short write on store: " + path.string());
}

DescriptorIndex load_store(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open store: " + path.string());
  io::expect_magic(is, kStoreMagic, "descriptor store");
  const auto version = io::read_pod<std::uint16_t>(is);
  if (version != kStoreVersion)
    throw std::runtime_error("unsupported store version " + std::to_string(version));
  const auto count = io::read_pod<std::uint32_t>(is);
  const auto dim = io::read_pod<std::uint32_t>(is);

  DescriptorIndex index;
  index.dim = static_cast<int>(dim);
  index.ids.resize(count);
  for (auto& id : index.ids) id = io::read_pod<std::uint64_t>(is);
  index.poses.resize(count);
  for (auto& p : index.poses) {
    p.x = io::read_pod<float>(is);
    p.y = io::read_pod<float>(is);
    p.yaw = io::read_pod<float>(is);
  }
  index.descriptors.resize(count, dim);
  for (std::uint32_t r = 0; r < count; ++r)
    for (std::uint32_t c = 0; c < dim; ++c) index.descriptors(r, c) = io::read_pod<float>(is);
  return index;
}

}  // namespace rlpr::retrieval
