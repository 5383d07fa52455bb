#include "mtnet/synth.hpp"

#include <algorithm>
#include <iomanip>
#include <numeric>
#include <random>
#include <string>

#include "mtnet/errors.hpp"
#include "mtnet/hash.hpp"

namespace mtnet::synth {

std::vector<ingest::RawRecord> generate(const SynthOptions& o) {
  if (o.planted_slots <= 0 || 24 % o.planted_slots != 0)
    throw ConfigError("planted_slots", "must be a positive divisor of 24");
  if (o.active_slots == 0 || o.active_slots > static_cast<std::size_t>(o.planted_slots))
    throw ConfigError("active_slots", "must be in [1, planted_slots]");
  if (o.target_pois == 0 || o.categories == 0 || o.users == 0 || o.days == 0)
    throw ConfigError("", "users, days, target_pois and categories must be positive");

  std::mt19937_64 rng(mix_seed(o.seed, 0x5e17));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };

  struct Poi {
    std::string key, category;
    double lat, lon;
  };
  auto make_poi = [&](std::string key) {
    return Poi{std::move(key), "cat" + std::to_string(pick(o.categories)),
               40.60 + 0.30 * unit(rng), -74.10 + 0.30 * unit(rng)};
  };
  std::vector<Poi> pool;
  for (std::size_t i = 0; i < o.target_pois; ++i) pool.push_back(make_poi("t" + std::to_string(i)));
  std::vector<Poi> hubs;
  std::vector<std::vector<std::size_t>> target(o.users);
  for (std::size_t u = 0; u < o.users; ++u) {
    hubs.push_back(make_poi("h" + std::to_string(u)));
    for (int s = 0; s < o.planted_slots; ++s) target[u].push_back(pick(pool.size()));
  }

  const std::int64_t slot_seconds = 86400 / o.planted_slots;
  const std::int64_t third = slot_seconds / 3;
  const auto holdout_from = static_cast<std::size_t>(
      static_cast<double>(o.days) * (1.0 - (o.late_holdout ? o.holdout_fraction : 0.0)) + 1e-9);

  std::vector<ingest::RawRecord> out;
  for (std::size_t d = 0; d < o.days; ++d) {
    const bool late = o.late_holdout && d >= holdout_from;
    for (std::size_t u = 0; u < o.users; ++u) {
      std::vector<int> slots(o.planted_slots);
      std::iota(slots.begin(), slots.end(), 0);
      std::shuffle(slots.begin(), slots.end(), rng);
      slots.resize(o.active_slots);
      std::sort(slots.begin(), slots.end());
      for (int s : slots) {
        // Hub in the first half of the chosen third, target in the second.
        const std::int64_t base = o.start_time + static_cast<std::int64_t>(d) * 86400 +
                                  s * slot_seconds + (late ? slot_seconds - third : 0);
        const std::int64_t half = third / 2;
        const auto jitter = [&](std::int64_t span) {
          return std::uniform_int_distribution<std::int64_t>(0, span - 1)(rng);
        };
        const Poi& hub = hubs[u];
        out.push_back({"u" + std::to_string(u), hub.key, hub.category, base + jitter(half),
                       hub.lat, hub.lon});
        std::size_t t = target[u][s];
        if (o.noise > 0 && unit(rng) < o.noise) t = pick(pool.size());
        const Poi& p = pool[t];
        out.push_back({"u" + std::to_string(u), p.key, p.category, base + half + jitter(half),
                       p.lat, p.lon});
      }
    }
  }
  return out;
}

void write_csv(const std::vector<ingest::RawRecord>& records, std::ostream& out) {
  out << "user,poi,category,time,lat,lon\n";
  out << std::setprecision(17);
  for (const auto& r : records)
    out << r.user << ',' << r.poi << ',' << r.category << ',' << r.timestamp << ',' << r.lat << ','
        << r.lon << '\n';
}

}  // namespace mtnet::synth
