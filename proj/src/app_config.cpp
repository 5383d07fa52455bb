#include <fstream>
#include <sstream>

#include "mtnet/cli.hpp"
#include "mtnet/errors.hpp"
#include "mtnet/hash.hpp"

namespace mtnet::cli {

using nlohmann::json;

std::uint64_t AppConfig::init_seed() const { return mix_seed(seed, 1); }
std::uint64_t AppConfig::train_seed() const { return mix_seed(seed, 2); }
std::uint64_t AppConfig::eval_seed() const { return mix_seed(seed, 3); }

namespace {

const char* time_format_name(TimeFormat f) {
  switch (f) {
    case TimeFormat::Iso8601: return "iso8601";
    case TimeFormat::Epoch: return "epoch";
    case TimeFormat::Ctime: return "ctime";
  }
  return "iso8601";
}

std::string delimiter_name(char d) { return d == '\t' ? "\\t" : std::string(1, d); }

json column_json(const ingest::ColumnRef& c) {
  if (!c.name.empty()) return c.name;
  return c.index;
}

ingest::ColumnRef column_from_json(const json& v, const std::string& path) {
  ingest::ColumnRef c;
  if (v.is_string() && !v.get<std::string>().empty()) {
    c.index = -1;
    c.name = v.get<std::string>();
  } else if (v.is_number_integer() && v.get<long long>() >= 0) {
    c.index = v.get<int>();
  } else {
    throw ConfigError(path, "expected a column index or header name");
  }
  return c;
}

template <class T>
T get(const json& v, const std::string& path) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw ConfigError(path, "expected true or false");
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) throw ConfigError(path, "expected a string");
  } else if constexpr (std::is_unsigned_v<T>) {
    if (!v.is_number_integer() || v.get<long long>() < 0)
      throw ConfigError(path, "expected a non-negative integer");
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) throw ConfigError(path, "expected an integer");
  } else {
    if (!v.is_number()) throw ConfigError(path, "expected a number");
  }
  return v.get<T>();
}

json dataset_json(const DatasetConfig& d) {
  const auto& p = d.preprocess;
  const auto& f = p.format;
  return {{"input", d.input},
          {"bundle", d.bundle},
          {"delimiter", delimiter_name(f.delimiter)},
          {"has_header", f.has_header},
          {"time_format", time_format_name(f.time_format)},
          {"columns",
           {{"user", column_json(f.user)},
            {"poi", column_json(f.poi)},
            {"category", column_json(f.category)},
            {"time", column_json(f.time)},
            {"lat", column_json(f.lat)},
            {"lon", column_json(f.lon)}}},
          {"window_hours", p.window_hours},
          {"min_user_checkins", p.min_user_checkins},
          {"min_poi_visits", p.min_poi_visits},
          {"geo_clusters", p.geo_clusters},
          {"kmeans_max_iters", p.kmeans_max_iters},
          {"tz_offset_seconds", p.tz_offset_seconds},
          {"split", p.split}};
}

DatasetConfig dataset_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("dataset", "expected an object");
  DatasetConfig d;
  auto& p = d.preprocess;
  auto& f = p.format;
  for (const auto& [key, v] : j.items()) {
    const std::string path = "dataset." + key;
    if (key == "input") d.input = get<std::string>(v, path);
    else if (key == "bundle") d.bundle = get<std::string>(v, path);
    else if (key == "delimiter") {
      const auto s = get<std::string>(v, path);
      if (s == "\\t" || s == "\t" || s == "tab") f.delimiter = '\t';
      else if (s.size() == 1) f.delimiter = s[0];
      else throw ConfigError(path, "expected a single character or \"\\t\"");
    } else if (key == "has_header") f.has_header = get<bool>(v, path);
    else if (key == "time_format") {
      const auto s = get<std::string>(v, path);
      if (s == "iso8601") f.time_format = TimeFormat::Iso8601;
      else if (s == "epoch") f.time_format = TimeFormat::Epoch;
      else if (s == "ctime") f.time_format = TimeFormat::Ctime;
      else throw ConfigError(path, "expected \"iso8601\", \"epoch\" or \"ctime\"");
    } else if (key == "columns") {
      if (!v.is_object()) throw ConfigError(path, "expected an object");
      for (const auto& [col, cv] : v.items()) {
        const std::string cp = path + "." + col;
        if (col == "user") f.user = column_from_json(cv, cp);
        else if (col == "poi") f.poi = column_from_json(cv, cp);
        else if (col == "category") f.category = column_from_json(cv, cp);
        else if (col == "time") f.time = column_from_json(cv, cp);
        else if (col == "lat") f.lat = column_from_json(cv, cp);
        else if (col == "lon") f.lon = column_from_json(cv, cp);
        else throw ConfigError(cp, "unknown key");
      }
    } else if (key == "window_hours") {
      p.window_hours = get<double>(v, path);
      if (!(p.window_hours > 0)) throw ConfigError(path, "must be positive");
    } else if (key == "min_user_checkins") p.min_user_checkins = get<std::size_t>(v, path);
    else if (key == "min_poi_visits") p.min_poi_visits = get<std::size_t>(v, path);
    else if (key == "geo_clusters") {
      p.geo_clusters = get<std::size_t>(v, path);
      if (p.geo_clusters == 0) throw ConfigError(path, "must be positive");
    } else if (key == "kmeans_max_iters") p.kmeans_max_iters = get<std::size_t>(v, path);
    else if (key == "tz_offset_seconds") p.tz_offset_seconds = get<std::int64_t>(v, path);
    else if (key == "split") {
      if (!v.is_array() || v.size() != 3) throw ConfigError(path, "expected three fractions");
      double total = 0;
      for (std::size_t i = 0; i < 3; ++i) {
        p.split[i] = get<double>(v[i], path);
        if (!(p.split[i] >= 0)) throw ConfigError(path, "fractions must be non-negative");
        total += p.split[i];
      }
      if (std::abs(total - 1.0) > 1e-9) throw ConfigError(path, "fractions must sum to 1");
    } else throw ConfigError(path, "unknown key");
  }
  return d;
}

json eval_json(const EvalConfig& e) {
  return {{"split", e.split}, {"last_prefix_only", e.last_prefix_only}, {"ks", e.ks}};
}

EvalConfig eval_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("eval", "expected an object");
  EvalConfig e;
  for (const auto& [key, v] : j.items()) {
    const std::string path = "eval." + key;
    if (key == "split") {
      e.split = get<std::string>(v, path);
      if (e.split != "train" && e.split != "valid" && e.split != "test")
        throw ConfigError(path, "expected \"train\", \"valid\" or \"test\"");
    } else if (key == "last_prefix_only") e.last_prefix_only = get<bool>(v, path);
    else if (key == "ks") {
      if (!v.is_array() || v.empty()) throw ConfigError(path, "expected a non-empty list");
      e.ks.clear();
      for (const auto& k : v) {
        e.ks.push_back(get<std::size_t>(k, path));
        if (e.ks.back() == 0) throw ConfigError(path, "k must be positive");
      }
    } else throw ConfigError(path, "unknown key");
  }
  return e;
}

}  // namespace

json to_json(const AppConfig& c) {
  return {{"seed", c.seed},
          {"dataset", dataset_json(c.dataset)},
          {"model", model::to_json(c.model)},
          {"train", train::to_json(c.train)},
          {"eval", eval_json(c.eval)}};
}

AppConfig app_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("", "configuration must be a JSON object");
  AppConfig c;
  bool model_tz = false;
  for (const auto& [key, v] : j.items()) {
    if (key == "seed") c.seed = get<std::uint64_t>(v, "seed");
    else if (key == "dataset") c.dataset = dataset_from_json(v);
    else if (key == "model") {
      c.model = model::model_config_from_json(v);
      model_tz = v.contains("tz_offset_seconds");
    } else if (key == "train") c.train = train::train_config_from_json(v);
    else if (key == "eval") c.eval = eval_from_json(v);
    else throw ConfigError(key, "unknown key");
  }
  // One timezone for day boundaries in preprocessing and in the model.
  if (model_tz && c.model.tz_offset_seconds != c.dataset.preprocess.tz_offset_seconds)
    throw ConfigError("model.tz_offset_seconds", "must equal dataset.tz_offset_seconds");
  c.model.tz_offset_seconds = c.dataset.preprocess.tz_offset_seconds;
  c.dataset.preprocess.slots_per_day = c.model.slots_per_day;
  c.dataset.preprocess.seed = c.kmeans_seed();
  return c;
}

AppConfig load_app_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("", "config " + path + " is not valid JSON: " + e.what());
  }
  return app_config_from_json(j);
}

std::string config_hash(const AppConfig& c) {
  json j = to_json(c);
  j["dataset"].erase("input");
  j["dataset"].erase("bundle");
  return sha256_hex(j.dump());
}

std::string dataset_hash(const AppConfig& c) {
  json j = to_json(c);
  json d = j["dataset"];
  d.erase("input");
  d.erase("bundle");
  return sha256_hex(json{{"dataset", d}, {"slots_per_day", c.model.slots_per_day}, {"seed", c.seed}}.dump());
}

}  // namespace mtnet::cli
