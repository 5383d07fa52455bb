#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <string>
#include <vector>

#include "mtnet/ingest.hpp"

// The end-to-end preprocessing pipeline and its on-disk bundle.
namespace mtnet::ingest {

struct PreprocessOptions {
  InputFormat format;
  double window_hours = 24.0;
  std::size_t min_user_checkins = 10;
  std::size_t min_poi_visits = 10;
  std::size_t geo_clusters = 60;
  std::size_t kmeans_max_iters = 100;
  std::int64_t tz_offset_seconds = 0;
  std::array<double, 3> split{0.8, 0.1, 0.1};
  int slots_per_day = 4;  // only used to record the leaf fan-out bound
  std::uint64_t seed = 42;
};

struct PreprocessStats {
  std::size_t rows = 0;
  std::size_t malformed = 0;
  std::size_t records_after_filter = 0;
  std::size_t users = 0;
  std::size_t pois = 0;
  std::size_t categories = 0;
  std::size_t checkins = 0;      // inside kept trajectories
  std::size_t trajectories = 0;
  std::size_t train = 0;
  std::size_t valid = 0;
  std::size_t test = 0;
  std::size_t kmeans_iterations = 0;
  std::size_t kmeans_reseeds = 0;

  friend bool operator==(const PreprocessStats&, const PreprocessStats&) = default;
};

struct Bundle {
  Vocab vocab;
  std::vector<std::array<double, 2>> centroids;
  DatasetSplit split;
  PreprocessStats stats;
  double window_hours = 24.0;
  std::int64_t tz_offset_seconds = 0;
  int slots_per_day = 4;
  std::size_t max_leaves_per_period = 0;  // for slots_per_day, over all splits
  std::string config_hash;                // hash of the preprocessing config
  std::string config_json;                // the config itself, for provenance

  const std::vector<Trajectory>& split_named(const std::string& name) const;  // ConfigError

  friend bool operator==(const Bundle&, const Bundle&) = default;
};

// parse -> filter -> vocab -> k-means over POI coordinates -> trajectories ->
// chronological split.
Bundle preprocess(std::istream& in, const PreprocessOptions& opts, std::string config_hash = "",
                  std::string config_json = "");

// JSON container; doubles are written in shortest round-trip form so a
// save/load cycle is lossless.
std::string bundle_to_string(const Bundle& bundle);
Bundle bundle_from_string(const std::string& text);  // DataError on malformed content
void save_bundle(const Bundle& bundle, const std::string& path);  // IoError
Bundle load_bundle(const std::string& path);                      // IoError, DataError

}  // namespace mtnet::ingest
