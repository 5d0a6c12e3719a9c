#include "rlpr/worldgen/dataset.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "rlpr/core/io.hpp"
#include "rlpr/core/rng.hpp"

namespace rlpr::worldgen {

namespace {
constexpr char kScanMagic[9] = "RLPRSCAN";
constexpr std::uint16_t kScanVersion = 1;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
}  // namespace

const ScanRecord& DatasetManifest::record(std::uint64_t scan_id) const {
  for (const auto& rec : scans)
    if (rec.scan_id == scan_id) return rec;
  throw std::out_of_range("manifest: unknown scan id " + std::to_string(scan_id));
}

void write_scan_file(const std::filesystem::path& path, const PointCloud& cloud) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open scan file for writing: " + path.string());
  io::write_magic(os, kScanMagic);
  io::write_pod<std::uint16_t>(os, kScanVersion);
  io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(cloud.points.size()));
  for (const auto& p : cloud.points) {
    io::write_pod<float>(os, static_cast<float>(p.x));
    io::write_pod<float>(os, static_cast<float>(p.y));
    io::write_pod<float>(os, static_cast<float>(p.z));
  }
  if (!os) throw std::runtime_error("short write on scan file: " + path.string());
}

PointCloud read_scan_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open scan file: " + path.string());
  io::expect_magic(is, kScanMagic, "scan");
  const auto version = io::read_pod<std::uint16_t>(is);
  if (version != kScanVersion)
    throw std::runtime_error("unsupported scan file version " + std::to_string(version));
  const auto count = io::read_pod<std::uint32_t>(is);
  PointCloud cloud;
  cloud.points.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const float x = io::read_pod<float>(is);
    const float y = io::read_pod<float>(is);
    const float z = io::read_pod<float>(is);
    cloud.points.push_back({x, y, z});
  }
  return cloud;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open manifest for writing: " + path.string());
  os << "rlpr_manifest_version 1\n";
  os << "world_seed " << manifest.world_seed << "\n";
  os << "radar_profile " << manifest.radar_profile << "\n";
  os << "scan_count " << manifest.scans.size() << "\n";
  for (const auto& rec : manifest.scans) {
    os << "scan " << rec.scan_id << ' ' << to_string(rec.sensor) << ' '
       << format_double(rec.pose.x) << ' ' << format_double(rec.pose.y) << ' '
       << format_double(rec.pose.yaw) << ' ' << rec.path << "\n";
  }
  auto write_split = [&os](const char* name, const std::vector<std::uint64_t>& ids) {
    os << "split " << name << ' ' << ids.size();
    for (auto id : ids) os << ' ' << id;
    os << "\n";
  };
  write_split("train", manifest.train_ids);
  write_split("database", manifest.database_ids);
  write_split("query", manifest.query_ids);
  if (!os) throw std::runtime_error("short write on manifest: " + path.string());
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open manifest: " + path.string());
  DatasetManifest manifest;
  manifest.root = path.parent_path();

  std::string line;
  bool saw_header = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "rlpr_manifest_version") {
      int version = 0;
      ss >> version;
      if (version != 1) throw std::runtime_error("unsupported manifest version");
      saw_header = true;
    } else if (key == "world_seed") {
      ss >> manifest.world_seed;
    } else if (key == "radar_profile") {
      ss >> manifest.radar_profile;
    } else if (key == "scan_count") {
      std::size_t n = 0;
      ss >> n;
      manifest.scans.reserve(n);
    } else if (key == "scan") {
      ScanRecord rec;
      std::string kind;
      ss >> rec.scan_id >> kind >> rec.pose.x >> rec.pose.y >> rec.pose.yaw >> rec.path;
      rec.sensor = sensor_kind_from_string(kind);
      if (!ss) throw std::runtime_error("malformed scan line in manifest");
      manifest.scans.push_back(std::move(rec));
    } else if (key == "split") {
      std::string name;
      std::size_t n = 0;
      ss >> name >> n;
      std::vector<std::uint64_t> ids(n);
      for (auto& id : ids) ss >> id;
      if (!ss) throw std::runtime_error("malformed split line in manifest");
      if (name == "train") manifest.train_ids = std::move(ids);
      else if (name == "database") manifest.database_ids = std::move(ids);
      else if (name == "query") manifest.query_ids = std::move(ids);
      else throw std::runtime_error("unknown split '" + name + "' in manifest");
    } else {
      throw std::runtime_error("unknown manifest key '" + key + "'");
    }
  }
  if (!saw_header) throw std::runtime_error("missing manifest header: " + path.string());
  return manifest;
}

PointCloud load_scan(const DatasetManifest& manifest, std::uint64_t scan_id) {
  const auto& rec = manifest.record(scan_id);
  PointCloud cloud = read_scan_file(manifest.root / rec.path);
  cloud.sensor = rec.sensor;
  cloud.pose = rec.pose;
  cloud.scan_id = rec.scan_id;
  return cloud;
}

DatasetManifest build_dataset(const DatasetConfig& cfg, const std::filesystem::path& out_dir) {
  if (!is_radar(cfg.radar_kind))
    throw std::invalid_argument("build_dataset: radar profile must be a radar kind");

  const World world = generate_world(cfg.seed, cfg.world);
  const auto poses = generate_trajectory(world, mix_seeds(cfg.seed, 1), cfg.traj);
  const int per_loop = static_cast<int>(std::llround(cfg.traj.loop_length / cfg.traj.spacing));

  const SensorProfile lidar = default_profile(SensorKind::lidar);
  const SensorProfile radar = default_profile(cfg.radar_kind);

  std::filesystem::create_directories(out_dir / "scans");

  DatasetManifest manifest;
  manifest.world_seed = cfg.seed;
  manifest.radar_profile = to_string(cfg.radar_kind);
  manifest.root = out_dir;

  for (std::size_t i = 0; i < poses.size(); ++i) {
    for (int mod = 0; mod < 2; ++mod) {
      const std::uint64_t scan_id = 2 * i + mod;  // even = lidar, odd = radar
      const SensorProfile& profile = mod == 0 ? lidar : radar;
      const PointCloud cloud =
          simulate_scan(world, poses[i], profile, mix_seeds(cfg.seed, scan_id));

      char name[32];
      std::snprintf(name, sizeof(name), "scans/scan_%06" PRIu64 ".bin", scan_id);
      write_scan_file(out_dir / name, cloud);

      manifest.scans.push_back({scan_id, profile.kind, poses[i], name});
      manifest.train_ids.push_back(scan_id);
      const int loop = static_cast<int>(i) / per_loop;
      if (loop == 0 && mod == 0) manifest.database_ids.push_back(scan_id);
      if (loop == 1 && mod == 1) manifest.query_ids.push_back(scan_id);
    }
  }

  // Protocol invariant: recall is undefined for a query without a reachable
  // positive, so fail generation outright instead of producing such a set.
  for (auto qid : manifest.query_ids) {
    const auto& q = manifest.record(qid);
    bool has_positive = false;
    for (auto did : manifest.database_ids) {
      if (pose_distance(q.pose, manifest.record(did).pose) <= cfg.positive_radius) {
        has_positive = true;
        break;
      }
    }
    if (!has_positive)
      throw std::runtime_error("build_dataset: query " + std::to_string(qid) +
                               " has no database positive within " +
                               std::to_string(cfg.positive_radius) + " m");
  }

  write_manifest(out_dir / "manifest.txt", manifest);
  return manifest;
}

}  // namespace rlpr::worldgen
