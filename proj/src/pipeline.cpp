#include <algorithm>
#include <filesystem>
#include <iomanip>
#include <sstream>

#include "mtnet/cli.hpp"
#include "mtnet/errors.hpp"
#include "mtnet/tree.hpp"

namespace mtnet::cli {

using nlohmann::json;

ingest::Bundle preprocess(const AppConfig& c, std::istream& input) {
  auto opts = c.dataset.preprocess;
  opts.seed = c.kmeans_seed();
  opts.slots_per_day = c.model.slots_per_day;
  json provenance = to_json(c);
  provenance.erase("train");
  provenance.erase("eval");
  provenance["dataset"].erase("bundle");  // the bundle's own location
  return ingest::preprocess(input, opts, dataset_hash(c), provenance.dump());
}

std::unique_ptr<model::MTNet> make_model(const AppConfig& c, const ingest::Bundle& bundle) {
  if (bundle.tz_offset_seconds != c.model.tz_offset_seconds)
    throw ConfigError("dataset.tz_offset_seconds",
                      "is " + std::to_string(c.model.tz_offset_seconds) + " but the bundle was built with " +
                          std::to_string(bundle.tz_offset_seconds));
  const int p = c.model.slots_per_day;
  const auto tz = c.model.tz_offset_seconds;
  const std::size_t max_leaves = std::max({tree::max_leaves_per_period(bundle.split.train, p, tz),
                                           tree::max_leaves_per_period(bundle.split.valid, p, tz),
                                           tree::max_leaves_per_period(bundle.split.test, p, tz)});
  const model::VocabSizes sizes{bundle.vocab.users.size(), bundle.vocab.pois.size(),
                                bundle.vocab.categories.size(), bundle.vocab.num_geo_clusters};
  return std::make_unique<model::MTNet>(c.model, sizes, max_leaves, c.init_seed());
}

void check_vocab(const std::string& checkpoint_vocab_hash, const ingest::Bundle& bundle) {
  const auto bundle_hash = bundle.vocab.hash();
  if (checkpoint_vocab_hash != bundle_hash)
    throw DataError("vocabulary mismatch: checkpoint " + checkpoint_vocab_hash + " vs bundle " + bundle_hash);
}

eval::EvalOptions eval_options(const AppConfig& c) {
  eval::EvalOptions o;
  o.last_prefix_only = c.eval.last_prefix_only;
  o.seed = c.eval_seed();
  o.ks = c.eval.ks;
  return o;
}

std::vector<SweepRow> granularity_sweep(const AppConfig& base, const std::string& csv,
                                        const std::vector<int>& slots, const std::string& out_dir) {
  std::vector<SweepRow> rows;
  for (const int p : slots) {
    AppConfig cfg = base;
    cfg.model.slots_per_day = p;
    cfg.dataset.preprocess.slots_per_day = p;
    cfg.model.validate();
    std::istringstream in(csv);
    const auto bundle = preprocess(cfg, in);
    auto net = make_model(cfg, bundle);
    train::FitOptions fo;
    if (!out_dir.empty()) fo.out_dir = (std::filesystem::path(out_dir) / ("P" + std::to_string(p))).string();
    fo.config_hash = config_hash(cfg);
    fo.effective_config = to_json(cfg);
    const auto res = train::fit(*net, bundle, cfg.train, fo, cfg.train_seed());
    train::restore_params(net->params(), res.best_params);
    SweepRow row;
    row.slots_per_day = p;
    row.best_epoch = res.best_epoch;
    if (!res.history.empty() && res.history[res.best_epoch].valid)
      row.valid_acc1 = res.history[res.best_epoch].valid->acc_at(1);
    row.test = eval::evaluate(*net, bundle.split.test, eval_options(cfg));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string sweep_table(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "| P | slot hours | best epoch | valid Acc@1 | test Acc@1 | test Acc@5 | test Acc@10 | test MRR |\n";
  os << "|---|---|---|---|---|---|---|---|\n";
  for (const auto& r : rows)
    os << "| " << r.slots_per_day << " | " << 24 / r.slots_per_day << " | " << r.best_epoch << " | "
       << r.valid_acc1 << " | " << r.test.acc_at(1) << " | " << r.test.acc_at(5) << " | "
       << r.test.acc_at(10) << " | " << r.test.mrr << " |\n";
  return os.str();
}

}  // namespace mtnet::cli
