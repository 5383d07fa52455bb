#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mtnet/types.hpp"

// Mobility Tree: day nodes over period (time-slot) nodes over check-in leaves.
namespace mtnet::tree {

// Throws ConfigError unless P is a positive divisor of 24.
void validate_slots_per_day(int slots_per_day);

// floor(local hour / (24 / P)).
int period_index(std::int64_t timestamp, int slots_per_day, std::int64_t tz_offset_seconds = 0);

struct PeriodNode {
  int slot_index = 0;
  std::vector<std::size_t> leaves;  // positions in MobilityTree::checkins, ascending

  friend bool operator==(const PeriodNode&, const PeriodNode&) = default;
};

struct DayNode {
  std::int64_t day_key = 0;  // local days since epoch
  int day_of_week = 0;       // 0 = Monday
  std::vector<PeriodNode> periods;  // ascending slot_index

  friend bool operator==(const DayNode&, const DayNode&) = default;
};

// Indices of the nodes holding the chronologically last check-in.
struct CurrentPath {
  std::size_t day = 0;
  std::size_t period = 0;  // within days[day]
  std::size_t leaf = 0;    // within that period's leaves

  friend bool operator==(const CurrentPath&, const CurrentPath&) = default;
};

struct MobilityTree {
  std::vector<CheckIn> checkins;  // the prefix the tree was built from, in input order
  std::vector<DayNode> days;      // ascending day_key
  int slots_per_day = 0;
  std::int64_t tz_offset_seconds = 0;
  CurrentPath current;

  const CheckIn& leaf(std::size_t position) const { return checkins[position]; }

  friend bool operator==(const MobilityTree&, const MobilityTree&) = default;
};

// Groups leaves by (local day, period). Throws DataError for an empty or
// time-unordered prefix and ConfigError for an invalid P.
MobilityTree build_mobility_tree(std::span<const CheckIn> prefix, int slots_per_day,
                                 std::int64_t tz_offset_seconds = 0);

struct TreeStats {
  std::size_t days = 0;
  std::size_t periods = 0;
  std::size_t leaves = 0;
  std::size_t max_leaves_per_period = 0;

  friend bool operator==(const TreeStats&, const TreeStats&) = default;
};

TreeStats tree_stats(const MobilityTree& tree);

// Largest period group over full trajectories; every prefix is bounded by it.
std::size_t max_leaves_per_period(std::span<const Trajectory> trajectories, int slots_per_day,
                                  std::int64_t tz_offset_seconds = 0);

// Leaf positions in (day, period, time) order.
std::vector<std::size_t> leaf_order(const MobilityTree& tree);

// Indented text rendering for debugging and docs.
std::string render(const MobilityTree& tree);

}  // namespace mtnet::tree
