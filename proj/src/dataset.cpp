#include "mtnet/dataset.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mtnet/errors.hpp"
#include "mtnet/tree.hpp"

namespace mtnet::ingest {

using nlohmann::json;

const std::vector<Trajectory>& Bundle::split_named(const std::string& name) const {
  if (name == "train") return split.train;
  if (name == "valid") return split.valid;
  if (name == "test") return split.test;
  throw ConfigError("split", "unknown split '" + name + "' (expected train, valid or test)");
}

Bundle preprocess(std::istream& in, const PreprocessOptions& opts, std::string config_hash,
                  std::string config_json) {
  tree::validate_slots_per_day(opts.slots_per_day);
  Bundle b;
  b.window_hours = opts.window_hours;
  b.tz_offset_seconds = opts.tz_offset_seconds;
  b.slots_per_day = opts.slots_per_day;
  b.config_hash = std::move(config_hash);
  b.config_json = std::move(config_json);

  auto parsed = parse_checkins(in, opts.format);
  b.stats.rows = parsed.rows;
  b.stats.malformed = parsed.warnings;
  const auto records = filter_records(parsed.records, opts.min_user_checkins, opts.min_poi_visits);
  b.stats.records_after_filter = records.size();

  b.vocab = Vocab::from_records(records);
  std::vector<std::array<double, 2>> coords;
  coords.reserve(b.vocab.poi_attrs.size());
  for (const auto& a : b.vocab.poi_attrs) coords.push_back({a.lat, a.lon});
  if (!coords.empty()) {
    const auto km = kmeans_geo(coords, opts.geo_clusters, opts.kmeans_max_iters, opts.seed);
    for (std::size_t i = 0; i < coords.size(); ++i)
      b.vocab.poi_attrs[i].geo_cluster_id = static_cast<std::uint32_t>(km.assignment[i]);
    b.centroids = km.centroids;
    b.vocab.num_geo_clusters = km.centroids.size();
    b.stats.kmeans_iterations = km.iterations;
    b.stats.kmeans_reseeds = km.reseeds;
  }

  auto trajectories = split_trajectories(to_checkins(records, b.vocab), opts.window_hours);
  b.stats.users = b.vocab.users.size();
  b.stats.pois = b.vocab.pois.size();
  b.stats.categories = b.vocab.categories.size();
  b.stats.trajectories = trajectories.size();
  for (const auto& t : trajectories) b.stats.checkins += t.checkins.size();
  b.max_leaves_per_period =
      tree::max_leaves_per_period(trajectories, opts.slots_per_day, opts.tz_offset_seconds);

  b.split = chronological_split(std::move(trajectories), opts.split);
  b.stats.train = b.split.train.size();
  b.stats.valid = b.split.valid.size();
  b.stats.test = b.split.test.size();
  return b;
}

namespace {

json trajectories_to_json(const std::vector<Trajectory>& ts) {
  json arr = json::array();
  for (const auto& t : ts) {
    json cs = json::array();
    for (const auto& c : t.checkins)
      cs.push_back({c.poi_id, c.category_id, c.geo_cluster_id, c.lat, c.lon, c.timestamp});
    arr.push_back({{"user", t.user_id}, {"checkins", std::move(cs)}});
  }
  return arr;
}

std::vector<Trajectory> trajectories_from_json(const json& arr) {
  std::vector<Trajectory> out;
  for (const auto& jt : arr) {
    Trajectory t;
    t.user_id = jt.at("user").get<std::uint32_t>();
    for (const auto& jc : jt.at("checkins")) {
      if (!jc.is_array() || jc.size() != 6) throw DataError("check-in entry must have 6 fields");
      CheckIn c;
      c.user_id = t.user_id;
      c.poi_id = jc[0].get<std::uint32_t>();
      c.category_id = jc[1].get<std::uint32_t>();
      c.geo_cluster_id = jc[2].get<std::uint32_t>();
      c.lat = jc[3].get<double>();
      c.lon = jc[4].get<double>();
      c.timestamp = jc[5].get<std::int64_t>();
      t.checkins.push_back(c);
    }
    out.push_back(std::move(t));
  }
  return out;
}

json stats_to_json(const PreprocessStats& s) {
  return {{"rows", s.rows},
          {"malformed", s.malformed},
          {"records_after_filter", s.records_after_filter},
          {"users", s.users},
          {"pois", s.pois},
          {"categories", s.categories},
          {"checkins", s.checkins},
          {"trajectories", s.trajectories},
          {"train", s.train},
          {"valid", s.valid},
          {"test", s.test},
          {"kmeans_iterations", s.kmeans_iterations},
          {"kmeans_reseeds", s.kmeans_reseeds}};
}

PreprocessStats stats_from_json(const json& j) {
  PreprocessStats s;
  s.rows = j.at("rows");
  s.malformed = j.at("malformed");
  s.records_after_filter = j.at("records_after_filter");
  s.users = j.at("users");
  s.pois = j.at("pois");
  s.categories = j.at("categories");
  s.checkins = j.at("checkins");
  s.trajectories = j.at("trajectories");
  s.train = j.at("train");
  s.valid = j.at("valid");
  s.test = j.at("test");
  s.kmeans_iterations = j.at("kmeans_iterations");
  s.kmeans_reseeds = j.at("kmeans_reseeds");
  return s;
}

void validate(const Bundle& b) {
  const auto& v = b.vocab;
  if (v.poi_attrs.size() != v.pois.size()) throw DataError("POI attribute table size mismatch");
  if (b.centroids.size() != v.num_geo_clusters) throw DataError("centroid count mismatch");
  for (const auto& a : v.poi_attrs)
    if (a.category_id >= v.categories.size() || a.geo_cluster_id >= v.num_geo_clusters)
      throw DataError("POI attribute id out of range");
  for (const auto* part : {&b.split.train, &b.split.valid, &b.split.test})
    for (const auto& t : *part) {
      if (t.user_id >= v.users.size()) throw DataError("trajectory user id out of range");
      for (const auto& c : t.checkins)
        if (c.poi_id >= v.pois.size() || c.category_id >= v.categories.size() ||
            c.geo_cluster_id >= v.num_geo_clusters)
          throw DataError("check-in id out of range");
    }
}

}  // namespace

std::string bundle_to_string(const Bundle& b) {
  json attrs = json::array();
  for (const auto& a : b.vocab.poi_attrs)
    attrs.push_back({a.category_id, a.geo_cluster_id, a.lat, a.lon});
  json cents = json::array();
  for (const auto& c : b.centroids) cents.push_back({c[0], c[1]});
  json j = {
      {"format", "mtnet-bundle-1"},
      {"vocab",
       {{"users", b.vocab.users},
        {"pois", b.vocab.pois},
        {"categories", b.vocab.categories},
        {"num_geo_clusters", b.vocab.num_geo_clusters},
        {"poi_attrs", std::move(attrs)}}},
      {"vocab_hash", b.vocab.hash()},
      {"centroids", std::move(cents)},
      {"split",
       {{"train", trajectories_to_json(b.split.train)},
        {"valid", trajectories_to_json(b.split.valid)},
        {"test", trajectories_to_json(b.split.test)}}},
      {"stats", stats_to_json(b.stats)},
      {"window_hours", b.window_hours},
      {"tz_offset_seconds", b.tz_offset_seconds},
      {"slots_per_day", b.slots_per_day},
      {"max_leaves_per_period", b.max_leaves_per_period},
      {"config_hash", b.config_hash},
      {"config_json", b.config_json},
  };
  return j.dump() + "\n";
}

Bundle bundle_from_string(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.at("format") != "mtnet-bundle-1") throw DataError("not an mtnet bundle");
    Bundle b;
    const auto& jv = j.at("vocab");
    b.vocab.users = jv.at("users").get<std::vector<std::string>>();
    b.vocab.pois = jv.at("pois").get<std::vector<std::string>>();
    b.vocab.categories = jv.at("categories").get<std::vector<std::string>>();
    b.vocab.num_geo_clusters = jv.at("num_geo_clusters");
    for (const auto& a : jv.at("poi_attrs"))
      b.vocab.poi_attrs.push_back({a.at(0).get<std::uint32_t>(), a.at(1).get<std::uint32_t>(),
                                   a.at(2).get<double>(), a.at(3).get<double>()});
    b.vocab.reindex();
    for (const auto& c : j.at("centroids")) b.centroids.push_back({c.at(0), c.at(1)});
    b.split.train = trajectories_from_json(j.at("split").at("train"));
    b.split.valid = trajectories_from_json(j.at("split").at("valid"));
    b.split.test = trajectories_from_json(j.at("split").at("test"));
    b.stats = stats_from_json(j.at("stats"));
    b.window_hours = j.at("window_hours");
    b.tz_offset_seconds = j.at("tz_offset_seconds");
    b.slots_per_day = j.at("slots_per_day");
    b.max_leaves_per_period = j.at("max_leaves_per_period");
    b.config_hash = j.at("config_hash");
    b.config_json = j.at("config_json");
    validate(b);
    if (j.at("vocab_hash") != b.vocab.hash()) throw DataError("bundle vocabulary hash mismatch");
    return b;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed bundle: ") + e.what());
  }
}

void save_bundle(const Bundle& bundle, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out << bundle_to_string(bundle);
    if (!out.flush()) throw IoError("write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

Bundle load_bundle(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open bundle " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read error on " + path);
  return bundle_from_string(ss.str());
}

}  // namespace mtnet::ingest
