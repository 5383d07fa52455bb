#include "mtnet/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <string_view>

#include "mtnet/errors.hpp"
#include "mtnet/hash.hpp"

namespace mtnet::ingest {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return out;
}

bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

bool blank(std::string_view line) { return trim(line).empty(); }

int resolve(const ColumnRef& ref, const std::vector<std::string_view>& header, const char* key) {
  if (!ref.name.empty()) {
    if (header.empty())
      throw ConfigError(std::string("dataset.columns.") + key,
                        "column addressed by name '" + ref.name + "' but the input has no header");
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == ref.name) return static_cast<int>(i);
    throw ConfigError(std::string("dataset.columns.") + key,
                      "no header column named '" + ref.name + "'");
  }
  if (ref.index < 0)
    throw ConfigError(std::string("dataset.columns.") + key, "column index must be >= 0");
  return ref.index;
}

template <class Map>
std::uint32_t lookup(const Map& m, const std::string& key, const char* what) {
  auto it = m.find(key);
  if (it == m.end()) throw DataError(std::string("unknown ") + what + " '" + key + "'");
  return it->second;
}

}  // namespace

ParseResult parse_checkins(std::istream& in, const InputFormat& format) {
  ParseResult result;
  if (!in.good() && !in.eof()) throw IoError("input stream is not readable");

  std::string line;
  std::vector<std::string_view> header;
  std::string header_line;
  bool header_pending = format.has_header;
  std::array<int, 6> cols{};
  bool resolved = false;

  auto resolve_all = [&] {
    cols = {resolve(format.user, header, "user"),  resolve(format.poi, header, "poi"),
            resolve(format.category, header, "category"), resolve(format.time, header, "time"),
            resolve(format.lat, header, "lat"),    resolve(format.lon, header, "lon")};
    resolved = true;
  };

  while (std::getline(in, line)) {
    if (blank(line)) continue;
    if (header_pending) {
      header_line = line;
      header = split_fields(header_line, format.delimiter);
      header_pending = false;
      continue;
    }
    if (!resolved) resolve_all();
    ++result.rows;
    const auto fields = split_fields(line, format.delimiter);
    const int max_col = *std::max_element(cols.begin(), cols.end());
    if (static_cast<int>(fields.size()) <= max_col) {
      ++result.warnings;
      continue;
    }
    RawRecord rec;
    rec.user = std::string(fields[cols[0]]);
    rec.poi = std::string(fields[cols[1]]);
    rec.category = std::string(fields[cols[2]]);
    const auto ts = parse_timestamp(fields[cols[3]], format.time_format);
    if (rec.user.empty() || rec.poi.empty() || !ts || !parse_double(fields[cols[4]], rec.lat) ||
        !parse_double(fields[cols[5]], rec.lon) || rec.lat < -90 || rec.lat > 90 ||
        rec.lon < -180 || rec.lon > 180) {
      ++result.warnings;
      continue;
    }
    rec.timestamp = *ts;
    result.records.push_back(std::move(rec));
  }
  if (in.bad()) throw IoError("read error on input stream");
  if (!resolved && !header.empty()) resolve_all();  // validate names even without data rows
  return result;
}

std::vector<RawRecord> filter_records(const std::vector<RawRecord>& records,
                                      std::size_t min_user_checkins,
                                      std::size_t min_poi_visits) {
  std::unordered_map<std::string, std::size_t> per_user;
  for (const auto& r : records) ++per_user[r.user];
  std::vector<RawRecord> users_kept;
  for (const auto& r : records)
    if (per_user[r.user] >= min_user_checkins) users_kept.push_back(r);

  std::unordered_map<std::string, std::size_t> per_poi;
  for (const auto& r : users_kept) ++per_poi[r.poi];
  std::vector<RawRecord> out;
  for (auto& r : users_kept)
    if (per_poi[r.poi] >= min_poi_visits) out.push_back(std::move(r));
  return out;
}

Vocab Vocab::from_records(const std::vector<RawRecord>& records) {
  std::set<std::string> users, categories;
  std::map<std::string, const RawRecord*> first_of_poi;
  for (const auto& r : records) {
    users.insert(r.user);
    categories.insert(r.category);
    first_of_poi.emplace(r.poi, &r);
  }
  Vocab v;
  v.users.assign(users.begin(), users.end());
  v.categories.assign(categories.begin(), categories.end());
  v.reindex();
  for (const auto& [key, rec] : first_of_poi) {
    v.pois.push_back(key);
    v.poi_attrs.push_back({v.category_id(rec->category), 0, rec->lat, rec->lon});
  }
  v.reindex();
  return v;
}

void Vocab::reindex() {
  user_index_.clear();
  poi_index_.clear();
  category_index_.clear();
  for (std::size_t i = 0; i < users.size(); ++i) user_index_.emplace(users[i], i);
  for (std::size_t i = 0; i < pois.size(); ++i) poi_index_.emplace(pois[i], i);
  for (std::size_t i = 0; i < categories.size(); ++i) category_index_.emplace(categories[i], i);
  if (user_index_.size() != users.size() || poi_index_.size() != pois.size() ||
      category_index_.size() != categories.size())
    throw DataError("vocabulary contains duplicate keys");
}

std::uint32_t Vocab::user_id(const std::string& key) const { return lookup(user_index_, key, "user"); }
std::uint32_t Vocab::poi_id(const std::string& key) const { return lookup(poi_index_, key, "POI"); }
std::uint32_t Vocab::category_id(const std::string& key) const {
  return lookup(category_index_, key, "category");
}

std::string Vocab::hash() const {
  std::ostringstream os;
  os.precision(17);
  auto put = [&](const char* tag, const std::vector<std::string>& keys) {
    os << tag << ':' << keys.size() << '\n';
    for (const auto& k : keys) os << k.size() << ':' << k << '\n';
  };
  put("users", users);
  put("pois", pois);
  put("categories", categories);
  os << "geo:" << num_geo_clusters << '\n';
  for (const auto& a : poi_attrs)
    os << a.category_id << ',' << a.geo_cluster_id << ',' << a.lat << ',' << a.lon << '\n';
  return sha256_hex(os.str());
}

std::vector<CheckIn> to_checkins(const std::vector<RawRecord>& records, const Vocab& vocab) {
  std::vector<CheckIn> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    CheckIn c;
    c.user_id = vocab.user_id(r.user);
    c.poi_id = vocab.poi_id(r.poi);
    const auto& attrs = vocab.poi_attrs.at(c.poi_id);
    c.category_id = attrs.category_id;
    c.geo_cluster_id = attrs.geo_cluster_id;
    c.lat = r.lat;
    c.lon = r.lon;
    c.timestamp = r.timestamp;
    out.push_back(c);
  }
  return out;
}

std::vector<Trajectory> split_trajectories(const std::vector<CheckIn>& checkins,
                                           double window_hours) {
  if (!(window_hours > 0)) throw ConfigError("dataset.window_hours", "must be positive");
  const auto window = static_cast<std::int64_t>(std::llround(window_hours * 3600.0));

  std::map<std::uint32_t, std::vector<CheckIn>> by_user;
  for (const auto& c : checkins) by_user[c.user_id].push_back(c);
  std::vector<std::vector<CheckIn>*> groups;
  for (auto& [user, group] : by_user) groups.push_back(&group);

  // Each user is independent; results are concatenated in user order below.
  std::vector<std::vector<Trajectory>> per_user(groups.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t g = 0; g < groups.size(); ++g) {
    auto& group = *groups[g];
    std::stable_sort(group.begin(), group.end(),
                     [](const CheckIn& a, const CheckIn& b) { return a.timestamp < b.timestamp; });
    Trajectory cur;
    auto flush = [&] {
      if (cur.checkins.size() >= 2) per_user[g].push_back(std::move(cur));
      cur = Trajectory{};
    };
    for (const auto& c : group) {
      if (!cur.checkins.empty() && c.timestamp - cur.checkins.front().timestamp > window) flush();
      cur.user_id = c.user_id;
      cur.checkins.push_back(c);
    }
    flush();
  }
  std::vector<Trajectory> out;
  for (auto& v : per_user)
    for (auto& t : v) out.push_back(std::move(t));
  return out;
}

DatasetSplit chronological_split(std::vector<Trajectory> trajectories,
                                 std::array<double, 3> fractions) {
  const std::size_t n = trajectories.size();
  if (n < 3)
    throw ConfigError("dataset.split", "need at least 3 trajectories to split, got " +
                                           std::to_string(n));
  for (double f : fractions)
    if (!(f >= 0)) throw ConfigError("dataset.split", "fractions must be non-negative");
  const double total = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("dataset.split", "fractions must sum to 1");

  std::stable_sort(trajectories.begin(), trajectories.end(),
                   [](const Trajectory& a, const Trajectory& b) { return a.end_time() < b.end_time(); });
  // A tiny tolerance keeps products such as 0.9 * 10 from flooring to 8.
  auto boundary = [&](double cum) {
    return std::min(n, static_cast<std::size_t>(std::floor(cum * static_cast<double>(n) + 1e-9)));
  };
  const std::size_t b1 = boundary(fractions[0]);
  const std::size_t b2 = std::max(b1, boundary(fractions[0] + fractions[1]));

  DatasetSplit split;
  auto first = std::make_move_iterator(trajectories.begin());
  split.train.assign(first, first + b1);
  split.valid.assign(first + b1, first + b2);
  split.test.assign(first + b2, std::make_move_iterator(trajectories.end()));
  return split;
}

std::vector<Trajectory> make_supervised_samples(const std::vector<Trajectory>& trajectories,
                                                bool last_step_only) {
  std::vector<Trajectory> out;
  for (const auto& t : trajectories) {
    const std::size_t k = t.checkins.size();
    if (k < 2) continue;
    for (std::size_t j = last_step_only ? k - 1 : 1; j < k; ++j) {
      Trajectory s;
      s.user_id = t.user_id;
      s.checkins.assign(t.checkins.begin(), t.checkins.begin() + static_cast<std::ptrdiff_t>(j));
      s.label = t.checkins[j];
      out.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace mtnet::ingest
