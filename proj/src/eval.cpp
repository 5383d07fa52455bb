#include "mtnet/eval.hpp"

#include <algorithm>

#include "mtnet/errors.hpp"
#include "mtnet/hash.hpp"
#include "mtnet/ingest.hpp"
#include "mtnet/parallel.hpp"
#include "mtnet/tree.hpp"

namespace mtnet::eval {

std::size_t rank_of(std::span<const Real> scores, std::size_t truth) {
  if (truth >= scores.size())
    throw DataError("rank_of: true id " + std::to_string(truth) + " outside " +
                    std::to_string(scores.size()) + " scores");
  const Real s = scores[truth];
  std::size_t rank = 1;
  for (std::size_t j = 0; j < scores.size(); ++j)
    if (scores[j] > s || (j < truth && scores[j] == s)) ++rank;
  return rank;
}

double acc_at_k(std::span<const std::vector<Real>> scores, std::span<const std::size_t> truth,
                std::size_t k) {
  if (scores.size() != truth.size()) throw ShapeError("acc_at_k: score/label count mismatch");
  if (scores.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) hits += rank_of(scores[i], truth[i]) <= k;
  return static_cast<double>(hits) / static_cast<double>(scores.size());
}

double mrr(std::span<const std::vector<Real>> scores, std::span<const std::size_t> truth) {
  if (scores.size() != truth.size()) throw ShapeError("mrr: score/label count mismatch");
  if (scores.empty()) return 0.0;
  double s = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) s += 1.0 / static_cast<double>(rank_of(scores[i], truth[i]));
  return s / static_cast<double>(scores.size());
}

double EvalReport::acc_at(std::size_t k) const {
  auto it = acc.find(k);
  return it == acc.end() ? 0.0 : it->second;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j = {{"samples", samples}, {"mrr", mrr}};
  for (const auto& [k, v] : acc) j["acc@" + std::to_string(k)] = v;
  nlohmann::json slots = nlohmann::json::object();
  for (const auto& [slot, b] : per_slot)
    slots[std::to_string(slot)] = {{"samples", b.samples}, {"acc@1", b.acc1}, {"mrr", b.mrr}};
  j["per_slot"] = std::move(slots);
  return j;
}

EvalReport report_from_ranks(std::span<const std::size_t> ranks, std::span<const int> slots,
                             std::vector<std::size_t> ks) {
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  EvalReport r;
  r.samples = ranks.size();
  r.ks = ks;
  std::map<std::size_t, std::size_t> hits;
  double rr = 0;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    for (std::size_t k : ks) hits[k] += ranks[i] <= k;
    const double inv = 1.0 / static_cast<double>(ranks[i]);
    rr += inv;
    if (!slots.empty()) {
      auto& b = r.per_slot[slots[i]];
      ++b.samples;
      b.acc1 += ranks[i] == 1;
      b.mrr += inv;
    }
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, ranks.size()));
  for (std::size_t k : ks) r.acc[k] = static_cast<double>(hits[k]) / n;
  r.mrr = rr / n;
  for (auto& [slot, b] : r.per_slot) {
    b.acc1 /= static_cast<double>(b.samples);
    b.mrr /= static_cast<double>(b.samples);
  }
  return r;
}

EvalReport evaluate_samples(const model::MTNet& net, std::span<const Trajectory> samples,
                            const EvalOptions& opts) {
  const auto& cfg = net.config();
  std::vector<std::size_t> ranks(samples.size());
  std::vector<int> slots(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    const auto& s = samples[i];
    if (!s.label) throw DataError("evaluate: sample without a label");
    const auto tree = tree::build_mobility_tree(s.checkins, cfg.slots_per_day, cfg.tz_offset_seconds);
    ad::Tape tape(false);
    model::Pass pass(net, tape);
    if (opts.shuffle_slots)
      pass.slot_perm = model::random_derangement(cfg.slots_per_day, mix_seed(opts.seed, i));
    const auto fr = net.forward(pass, tree);
    ranks[i] = rank_of(fr.pred.rec.value(), s.label->poi_id);
    slots[i] = tree::period_index(s.label->timestamp, cfg.slots_per_day, cfg.tz_offset_seconds);
  });
  return report_from_ranks(ranks, slots, opts.ks);
}

EvalReport evaluate(const model::MTNet& net, std::span<const Trajectory> trajectories,
                    const EvalOptions& opts) {
  const auto samples = ingest::make_supervised_samples(
      std::vector<Trajectory>(trajectories.begin(), trajectories.end()), opts.last_prefix_only);
  return evaluate_samples(net, samples, opts);
}

}  // namespace mtnet::eval
