#pragma once

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <vector>

#include "mtnet/ingest.hpp"

// Synthetic check-in logs with planted per-slot habits.
//
// Each user has a home hub and, for every planted slot, a fixed target POI.
// On each day the user is active in `active_slots` randomly chosen slots;
// in every active slot they check in at the hub near the slot start and then
// at that slot's target. The target is therefore predictable only from the
// user and the slot of the current check-in.
namespace mtnet::synth {

struct SynthOptions {
  std::size_t users = 20;
  std::size_t days = 5;          // one trajectory per user-day
  int planted_slots = 4;         // planted slot width is 24 / planted_slots hours
  std::size_t active_slots = 3;  // per day, at most planted_slots
  std::size_t target_pois = 40;  // shared pool the per-slot targets are drawn from
  std::size_t categories = 8;
  // Probability of replacing a target visit by a uniformly random pool POI.
  double noise = 0.0;
  // The last `holdout_fraction` of days place visits in the last third of
  // each slot instead of the first third, so clock hours seen at test time
  // never occur in training.
  bool late_holdout = false;
  double holdout_fraction = 0.2;
  std::int64_t start_time = 1333324800;  // 2012-04-02 00:00:00 UTC, a Monday
  std::uint64_t seed = 1;
};

std::vector<ingest::RawRecord> generate(const SynthOptions& opts);

// Writes "user,poi,category,time,lat,lon" with a header row and epoch times.
void write_csv(const std::vector<ingest::RawRecord>& records, std::ostream& out);

}  // namespace mtnet::synth
