#include "mtnet/tree.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "mtnet/errors.hpp"
#include "mtnet/timeutil.hpp"

namespace mtnet::tree {

void validate_slots_per_day(int slots_per_day) {
  if (slots_per_day <= 0 || 24 % slots_per_day != 0)
    throw ConfigError("model.slots_per_day",
                      "must be a positive divisor of 24, got " + std::to_string(slots_per_day));
}

int period_index(std::int64_t timestamp, int slots_per_day, std::int64_t tz_offset_seconds) {
  validate_slots_per_day(slots_per_day);
  return hour_of_day(timestamp, tz_offset_seconds) / (24 / slots_per_day);
}

MobilityTree build_mobility_tree(std::span<const CheckIn> prefix, int slots_per_day,
                                 std::int64_t tz_offset_seconds) {
  validate_slots_per_day(slots_per_day);
  if (prefix.empty()) throw DataError("cannot build a mobility tree from an empty prefix");
  MobilityTree t;
  t.checkins.assign(prefix.begin(), prefix.end());
  t.slots_per_day = slots_per_day;
  t.tz_offset_seconds = tz_offset_seconds;
  const int width = 24 / slots_per_day;

  for (std::size_t i = 0; i < prefix.size(); ++i) {
    if (i > 0 && prefix[i].timestamp < prefix[i - 1].timestamp)
      throw DataError("trajectory check-ins are not in time order at position " +
                      std::to_string(i));
    const std::int64_t day = day_key(prefix[i].timestamp, tz_offset_seconds);
    const int slot = hour_of_day(prefix[i].timestamp, tz_offset_seconds) / width;
    // Non-decreasing timestamps mean (day, slot) is non-decreasing too, so a
    // new group is always appended at the end.
    if (t.days.empty() || t.days.back().day_key != day) {
      DayNode d;
      d.day_key = day;
      d.day_of_week = day_of_week(day);
      t.days.push_back(std::move(d));
    }
    auto& periods = t.days.back().periods;
    if (periods.empty() || periods.back().slot_index != slot) periods.push_back({slot, {}});
    periods.back().leaves.push_back(i);
  }
  t.current.day = t.days.size() - 1;
  t.current.period = t.days.back().periods.size() - 1;
  t.current.leaf = t.days.back().periods.back().leaves.size() - 1;
  return t;
}

TreeStats tree_stats(const MobilityTree& tree) {
  TreeStats s;
  s.days = tree.days.size();
  for (const auto& d : tree.days) {
    s.periods += d.periods.size();
    for (const auto& p : d.periods) {
      s.leaves += p.leaves.size();
      s.max_leaves_per_period = std::max(s.max_leaves_per_period, p.leaves.size());
    }
  }
  return s;
}

std::size_t max_leaves_per_period(std::span<const Trajectory> trajectories, int slots_per_day,
                                  std::int64_t tz_offset_seconds) {
  std::size_t best = 0;
  for (const auto& t : trajectories) {
    if (t.checkins.empty()) continue;
    best = std::max(best, tree_stats(build_mobility_tree(t.checkins, slots_per_day,
                                                         tz_offset_seconds))
                              .max_leaves_per_period);
  }
  return best;
}

std::vector<std::size_t> leaf_order(const MobilityTree& tree) {
  std::vector<std::size_t> out;
  for (const auto& d : tree.days)
    for (const auto& p : d.periods) out.insert(out.end(), p.leaves.begin(), p.leaves.end());
  return out;
}

std::string render(const MobilityTree& tree) {
  static constexpr const char* kDow[] = {"Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"};
  const int width = 24 / tree.slots_per_day;
  std::ostringstream os;
  const auto st = tree_stats(tree);
  os << "tree P=" << tree.slots_per_day << " days=" << st.days << " periods=" << st.periods
     << " leaves=" << st.leaves << "\n";
  char buf[64];
  for (std::size_t d = 0; d < tree.days.size(); ++d) {
    const auto& day = tree.days[d];
    os << (d == tree.current.day ? "* " : "  ") << "day " << day.day_key << " ("
       << kDow[day.day_of_week] << ")\n";
    for (std::size_t p = 0; p < day.periods.size(); ++p) {
      const auto& per = day.periods[p];
      const bool cur_p = d == tree.current.day && p == tree.current.period;
      std::snprintf(buf, sizeof buf, "%02d:00~%02d:00", per.slot_index * width,
                    (per.slot_index + 1) * width);
      os << (cur_p ? "  * " : "    ") << "period " << per.slot_index << " [" << buf << "]\n";
      for (std::size_t l = 0; l < per.leaves.size(); ++l) {
        const auto& c = tree.leaf(per.leaves[l]);
        const std::int64_t sec = seconds_into_day(c.timestamp, tree.tz_offset_seconds);
        std::snprintf(buf, sizeof buf, "%02lld:%02lld", static_cast<long long>(sec / 3600),
                      static_cast<long long>((sec % 3600) / 60));
        os << (cur_p && l == tree.current.leaf ? "    * " : "      ") << "s" << per.leaves[l] + 1
           << " " << buf << " poi=" << c.poi_id << " cat=" << c.category_id
           << " geo=" << c.geo_cluster_id << "\n";
      }
    }
  }
  return os.str();
}

}  // namespace mtnet::tree
