#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include <json.hpp>

#include "mtnet/model.hpp"
#include "mtnet/types.hpp"

// Ranking metrics over the full POI vocabulary. Ties are broken by ascending
// POI id: rank(t) = 1 + #{j : s_j > s_t} + #{j < t : s_j == s_t}.
namespace mtnet::eval {

std::size_t rank_of(std::span<const Real> scores, std::size_t truth);

// Fraction of rows whose truth ranks within the top k.
double acc_at_k(std::span<const std::vector<Real>> scores, std::span<const std::size_t> truth,
                std::size_t k);
double mrr(std::span<const std::vector<Real>> scores, std::span<const std::size_t> truth);

struct SlotBreakdown {
  std::size_t samples = 0;
  double acc1 = 0;
  double mrr = 0;

  friend bool operator==(const SlotBreakdown&, const SlotBreakdown&) = default;
};

struct EvalReport {
  std::size_t samples = 0;
  std::vector<std::size_t> ks;          // ascending
  std::map<std::size_t, double> acc;    // Acc@k for every k in ks
  double mrr = 0;
  std::map<int, SlotBreakdown> per_slot;  // keyed by the label's slot of day

  double acc_at(std::size_t k) const;  // 0 when k was not requested
  nlohmann::json to_json() const;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

// Builds the report from 1-based ranks; `slots` (same length, optional) feeds
// the per-slot breakdown.
EvalReport report_from_ranks(std::span<const std::size_t> ranks, std::span<const int> slots,
                             std::vector<std::size_t> ks = {1, 5, 10});

struct EvalOptions {
  bool last_prefix_only = false;  // default: every prefix of every trajectory
  bool shuffle_slots = false;     // present each sample with a random slot derangement
  std::uint64_t seed = 0;         // for shuffle_slots
  std::vector<std::size_t> ks{1, 5, 10};
};

// Evaluates trajectories (expanded to supervised samples) with dropout
// disabled. Samples run in parallel; aggregation is in sample order.
EvalReport evaluate(const model::MTNet& net, std::span<const Trajectory> trajectories,
                    const EvalOptions& opts = {});

// Same, over samples that already carry labels.
EvalReport evaluate_samples(const model::MTNet& net, std::span<const Trajectory> samples,
                            const EvalOptions& opts = {});

}  // namespace mtnet::eval
