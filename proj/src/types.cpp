#include "rlpr/core/types.hpp"

#include <stdexcept>

namespace rlpr {

std::string to_string(SensorKind k) {
  switch (k) {
    case SensorKind::lidar: return "lidar";
    case SensorKind::scanning_radar: return "scanning_radar";
    case SensorKind::single_chip_radar: return "single_chip_radar";
    case SensorKind::radar_4d: return "radar_4d";
  }
  throw std::logic_error("unknown sensor kind");
}

SensorKind sensor_kind_from_string(const std::string& s) {
  if (s == "lidar") return SensorKind::lidar;
  if (s == "scanning_radar") return SensorKind::scanning_radar;
  if (s == "single_chip_radar") return SensorKind::single_chip_radar;
  if (s == "radar_4d") return SensorKind::radar_4d;
  throw std::invalid_argument("unknown sensor kind '" + s + "'");
}

}  // namespace rlpr
