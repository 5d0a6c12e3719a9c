#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "rlpr/core/types.hpp"

namespace rlpr::retrieval {

// Exhaustive-search descriptor database. Rows are unit-norm descriptors;
// similarity is the inner product. Rows and poses are quantized to f32 at
// build time so the binary store round-trips bit-exactly.
struct DescriptorIndex {
  std::vector<std::uint64_t> ids;
  std::vector<Pose2D> poses;
  MatX descriptors;  // (n, dim)
  int dim = 0;

  std::size_t size() const { return ids.size(); }
};

DescriptorIndex build_index(const MatX& descriptors, const std::vector<Pose2D>& poses,
                            const std::vector<std::uint64_t>& ids);

// Top-K by inner product, descending; ties break toward the lower id.
// K beyond the index size returns every row ranked.
std::vector<std::pair<std::uint64_t, double>> query_topk(const DescriptorIndex& index,
                                                         const VecX& query, int k);

struct QueryItem {
  std::uint64_t id = 0;
  Pose2D pose;
  VecX descriptor;
};

// Percentage of queries with at least one retrieval within `radius` of the
// query pose among the top K. A query with no in-radius database entry at
// all is a protocol violation and throws.
double recall_at_k(const DescriptorIndex& index, const std::vector<QueryItem>& queries, int k,
                   double radius = 9.0);

// Threshold sweep over the observed top-1 similarities: accepted-and-correct
// counts TP, accepted-and-wrong FP, rejected-but-correct FN.
double max_f1(const DescriptorIndex& index, const std::vector<QueryItem>& queries,
              double radius = 9.0);

struct MetricsReport {
  std::vector<int> ks;
  std::vector<double> recall;  // percentages, aligned with ks
  double max_f1 = 0.0;
  std::size_t query_count = 0;
  double success_radius = 9.0;
};

MetricsReport compute_metrics(const DescriptorIndex& index, const std::vector<QueryItem>& queries,
                              const std::vector<int>& ks, double radius = 9.0);

// Binary store: "RLPRDESC", version u16, count u32, dim u32, ids u64,
// poses 3 x f32, rows dim x f32; little-endian.
void save_store(const std::filesystem::path& path, const DescriptorIndex& index);
DescriptorIndex load_store(const std::filesystem::path& path);

}  // namespace rlpr::retrieval
