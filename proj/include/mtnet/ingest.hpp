#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <string>
#include <unordered_map>
#include <vector>

#include "mtnet/timeutil.hpp"
#include "mtnet/types.hpp"

// Raw check-in logs -> filtered records -> vocabularies, geo clusters and
// chronologically split trajectories.
namespace mtnet::ingest {

// One decoded input row, ids still in their raw string form.
struct RawRecord {
  std::string user;
  std::string poi;
  std::string category;
  std::int64_t timestamp = 0;  // UTC epoch seconds
  double lat = 0.0;
  double lon = 0.0;

  friend bool operator==(const RawRecord&, const RawRecord&) = default;
};

// A column is addressed by zero-based index or, when the input has a header
// row, by header name (name wins when both are set).
struct ColumnRef {
  int index = -1;
  std::string name;
};

struct InputFormat {
  char delimiter = ',';
  bool has_header = false;
  TimeFormat time_format = TimeFormat::Iso8601;
  ColumnRef user{0, ""};
  ColumnRef poi{1, ""};
  ColumnRef category{2, ""};
  ColumnRef time{3, ""};
  ColumnRef lat{4, ""};
  ColumnRef lon{5, ""};
};

struct ParseResult {
  std::vector<RawRecord> records;
  std::size_t rows = 0;      // non-blank data rows seen
  std::size_t warnings = 0;  // rows skipped as malformed
};

// Decodes every row; rows with a missing column, unparseable time or
// out-of-range coordinates are skipped and counted. Throws IoError when the
// stream cannot be read and ConfigError when a named column is not in the
// header.
ParseResult parse_checkins(std::istream& in, const InputFormat& format);

// One pass removing users with fewer than `min_user_checkins` records, then
// one pass removing POIs visited fewer than `min_poi_visits` times by the
// remaining records. Input order is preserved.
std::vector<RawRecord> filter_records(const std::vector<RawRecord>& records,
                                      std::size_t min_user_checkins,
                                      std::size_t min_poi_visits);

struct PoiAttributes {
  std::uint32_t category_id = 0;
  std::uint32_t geo_cluster_id = 0;
  double lat = 0.0;
  double lon = 0.0;

  friend bool operator==(const PoiAttributes&, const PoiAttributes&) = default;
};

// Bijections between raw keys and dense ids. Ids are assigned in ascending
// raw-key order so the vocabulary does not depend on input row order.
class Vocab {
 public:
  std::vector<std::string> users;
  std::vector<std::string> pois;
  std::vector<std::string> categories;
  std::size_t num_geo_clusters = 0;
  std::vector<PoiAttributes> poi_attrs;  // indexed by poi id

  // Builds users/pois/categories from records. A POI's category and
  // coordinates are taken from its first record.
  static Vocab from_records(const std::vector<RawRecord>& records);

  std::uint32_t user_id(const std::string& key) const;      // throws DataError
  std::uint32_t poi_id(const std::string& key) const;       // throws DataError
  std::uint32_t category_id(const std::string& key) const;  // throws DataError

  // Hash over every key and attribute; used to detect checkpoint/bundle
  // mismatches.
  std::string hash() const;

  // Must be called after the public vectors are modified directly.
  void reindex();

  friend bool operator==(const Vocab& a, const Vocab& b) {
    return a.users == b.users && a.pois == b.pois && a.categories == b.categories &&
           a.num_geo_clusters == b.num_geo_clusters && a.poi_attrs == b.poi_attrs;
  }

 private:
  std::unordered_map<std::string, std::uint32_t> user_index_;
  std::unordered_map<std::string, std::uint32_t> poi_index_;
  std::unordered_map<std::string, std::uint32_t> category_index_;
};

// Resolves records against `vocab` (geo cluster taken from the POI table).
std::vector<CheckIn> to_checkins(const std::vector<RawRecord>& records, const Vocab& vocab);

// Groups check-ins per user (ascending user id), stable-sorts each group by
// timestamp and cuts a new trajectory whenever a check-in lies more than
// `window_hours` after the first check-in of the current one. Trajectories
// shorter than 2 are dropped.
std::vector<Trajectory> split_trajectories(const std::vector<CheckIn>& checkins,
                                           double window_hours = 24.0);

struct DatasetSplit {
  std::vector<Trajectory> train;
  std::vector<Trajectory> valid;
  std::vector<Trajectory> test;

  friend bool operator==(const DatasetSplit&, const DatasetSplit&) = default;
};

// Stable-sorts by end time; boundaries at floor(cumulative fraction * n).
// Throws ConfigError for fewer than 3 trajectories or invalid fractions.
DatasetSplit chronological_split(std::vector<Trajectory> trajectories,
                                 std::array<double, 3> fractions = {0.8, 0.1, 0.1});

struct KMeansResult {
  std::vector<std::size_t> assignment;     // per input point
  std::vector<std::array<double, 2>> centroids;
  std::vector<double> inertia_history;     // after each assignment step
  std::size_t iterations = 0;
  std::size_t reseeds = 0;                 // empty clusters re-seeded
};

// Lloyd's algorithm on (lat, lon) as a Euclidean plane, k-means++ seeded.
// Stops when assignments stop changing or after max_iters. An empty cluster
// is re-seeded to the point farthest from its current centroid. Throws
// ConfigError when k is 0 or exceeds the number of distinct points.
KMeansResult kmeans_geo(const std::vector<std::array<double, 2>>& points, std::size_t k,
                        std::size_t max_iters, std::uint64_t seed);

// Prefix expansion: a trajectory of length k yields samples (s_1..s_j ->
// s_{j+1}) for j = 1..k-1, or only j = k-1 when `last_step_only`.
std::vector<Trajectory> make_supervised_samples(const std::vector<Trajectory>& trajectories,
                                                bool last_step_only = false);

}  // namespace mtnet::ingest
