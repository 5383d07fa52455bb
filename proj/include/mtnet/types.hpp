#pragma once

#include <cstdint>
#include <optional>
#include <vector>

namespace mtnet {

// One visit event with all ids resolved against the dataset vocabulary.
struct CheckIn {
  std::uint32_t user_id = 0;
  std::uint32_t poi_id = 0;
  std::uint32_t category_id = 0;
  std::uint32_t geo_cluster_id = 0;
  double lat = 0.0;
  double lon = 0.0;
  std::int64_t timestamp = 0;  // seconds since epoch, UTC

  friend bool operator==(const CheckIn&, const CheckIn&) = default;
};

// A user's chronologically ordered check-ins within one split window.
// Supervised samples carry the ground-truth next check-in in `label`.
struct Trajectory {
  std::uint32_t user_id = 0;
  std::vector<CheckIn> checkins;
  std::optional<CheckIn> label;

  std::int64_t end_time() const {
    return label ? label->timestamp : (checkins.empty() ? 0 : checkins.back().timestamp);
  }

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

}  // namespace mtnet
