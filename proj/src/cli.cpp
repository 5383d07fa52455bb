#include <omp.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "mtnet/checkpoint.hpp"
#include "mtnet/cli.hpp"
#include "mtnet/diagnostics.hpp"
#include "mtnet/errors.hpp"
#include "mtnet/hash.hpp"
#include "mtnet/ingest.hpp"
#include "mtnet/parallel.hpp"
#include "mtnet/synth.hpp"
#include "mtnet/timeutil.hpp"
#include "mtnet/tree.hpp"

namespace mtnet::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// ---- shared helpers ----------------------------------------------------------

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out.flush()) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

void make_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
}

std::int64_t parse_time_arg(const std::string& text) {
  for (auto f : {TimeFormat::Epoch, TimeFormat::Iso8601, TimeFormat::Ctime})
    if (auto t = parse_timestamp(text, f)) return *t;
  throw ConfigError("--at", "cannot parse timestamp \"" + text + "\"");
}

std::vector<Real> row_values(const ad::Var& v) {
  const auto& t = v.value();
  return {t.begin(), t.end()};
}

// Configuration for commands that start from a checkpoint: an explicit
// --config wins, then the configuration embedded at training time, then
// defaults.
AppConfig config_for_checkpoint(const std::string& config_path, const model::CheckpointMeta& meta) {
  if (!config_path.empty()) return load_app_config(config_path);
  if (meta.extra.contains("config")) {
    try {
      return app_config_from_json(meta.extra.at("config"));
    } catch (const ConfigError& e) {
      throw DataError(std::string("checkpoint carries an invalid configuration: ") + e.what());
    }
  }
  return AppConfig{};
}

ingest::Bundle load_required_bundle(const AppConfig& c) {
  if (c.dataset.bundle.empty()) throw ConfigError("dataset.bundle", "a bundle path is required (--bundle)");
  return ingest::load_bundle(c.dataset.bundle);
}

// ---- reference page ------------------------------------------------------------

const std::map<std::string, std::string>& key_docs() {
  static const std::map<std::string, std::string> docs{
      {"seed", "Master seed; k-means, initialisation, training order/dropout and slot shuffles derive from it."},
      {"dataset.input", "Raw check-in file read by `preprocess` (overridden by --input)."},
      {"dataset.bundle", "Preprocessed bundle used by the other subcommands (overridden by --bundle)."},
      {"dataset.delimiter", "Field delimiter: one character, or \"\\t\" for tab-separated files."},
      {"dataset.has_header", "Whether the first row names the columns."},
      {"dataset.time_format", "\"iso8601\", \"epoch\" (seconds) or \"ctime\" (Foursquare style)."},
      {"dataset.columns.user", "Column index (0-based) or header name of the user id."},
      {"dataset.columns.poi", "Column index or header name of the POI id."},
      {"dataset.columns.category", "Column index or header name of the POI category."},
      {"dataset.columns.time", "Column index or header name of the timestamp."},
      {"dataset.columns.lat", "Column index or header name of the latitude."},
      {"dataset.columns.lon", "Column index or header name of the longitude."},
      {"dataset.window_hours", "Trajectory window: a check-in more than this many hours after the first one starts a new trajectory."},
      {"dataset.min_user_checkins", "Users with fewer check-ins are removed (applied first)."},
      {"dataset.min_poi_visits", "POIs with fewer visits are removed (applied second)."},
      {"dataset.geo_clusters", "k for k-means over POI coordinates."},
      {"dataset.kmeans_max_iters", "Iteration cap for Lloyd's algorithm."},
      {"dataset.tz_offset_seconds", "Offset added to UTC timestamps before deriving hours, slots and days."},
      {"dataset.split", "Chronological train/valid/test fractions by trajectory end time."},
      {"model.d_user", "User embedding width."},
      {"model.d_poi", "POI embedding width."},
      {"model.d_cat", "Category embedding width."},
      {"model.d_geo", "Geo-cluster embedding width."},
      {"model.hidden", "Hidden width of the tree cells (period, day and root nodes)."},
      {"model.ff_dim", "Inner width of the attention feed-forward block."},
      {"model.layers", "Attention layers per interaction step."},
      {"model.heads", "Attention heads; must divide the check-in width and model.hidden."},
      {"model.slots_per_day", "P, time slots per day; must divide 24."},
      {"model.leaf_fanout", "Maximum check-ins per period node; 0 uses the dataset maximum."},
      {"model.max_days", "Day fan-out of the super-root (root = super_root)."},
      {"model.gamma", "Weight of the time embedding in check-in node initialisation."},
      {"model.eta", "Weight of the day-node scores in the recommendation."},
      {"model.delta", "Weight of the period-node scores in the recommendation."},
      {"model.dropout_embed", "Dropout on embeddings."},
      {"model.dropout_param", "Dropout inside attention/feed-forward blocks."},
      {"model.root", "\"current_day\" (day of the last check-in) or \"super_root\" (node over recent days)."},
      {"model.tz_offset_seconds", "Mirrors dataset.tz_offset_seconds; must be equal when given."},
      {"model.ablations.no_multitask", "Plain sum of task losses instead of uncertainty weighting."},
      {"model.ablations.no_geo_head", "Drop the geo-cluster prediction task."},
      {"model.ablations.no_cat_head", "Drop the category prediction task."},
      {"model.ablations.no_iac", "Replace the attention steps with the identity."},
      {"model.ablations.no_irc", "Replace the tree cells with mean pooling plus a linear map."},
      {"model.ablations.no_aux_node_preds", "Recommend from the last check-in only; no day/period losses."},
      {"train.lr", "Initial Adam learning rate."},
      {"train.weight_decay", "L2 coefficient added to the gradient."},
      {"train.lr_step", "Epochs between learning-rate decays."},
      {"train.lr_gamma", "Learning-rate decay factor."},
      {"train.epochs", "Training epochs."},
      {"train.batch_size", "Samples per optimizer step."},
      {"train.shards", "Fixed gradient shards per batch; results do not depend on --threads."},
      {"train.clip_norm", "Global gradient-norm clip; 0 disables."},
      {"train.last_step_only", "Train on the last step of each trajectory only."},
      {"train.validate_each_epoch", "Evaluate the valid split after each epoch to choose best.ckpt."},
      {"eval.split", "Default split for `evaluate`."},
      {"eval.last_prefix_only", "Score only the final prefix of each trajectory."},
      {"eval.ks", "Cut-offs reported as Acc@k."},
  };
  return docs;
}

void flatten(const json& j, const std::string& prefix, std::vector<std::pair<std::string, json>>& out) {
  for (const auto& [k, v] : j.items()) {
    const std::string key = prefix.empty() ? k : prefix + "." + k;
    if (v.is_object()) flatten(v, key, out);
    else out.emplace_back(key, v);
  }
}

std::string reference_page(CLI::App& app) {
  std::ostringstream os;
  os << "# mtnet command reference\n\n"
     << "Generated by `mtnet reference`. Exit codes: 0 success, 1 runtime or numeric failure, "
     << "2 bad configuration or usage, 3 I/O failure, 4 invalid data. Errors are printed to stderr "
     << "as one JSON line: `{\"error\": kind, \"key\": path, \"message\": text}`.\n\n";
  os << "## Global options\n\n```\n" << app.get_formatter()->make_help(&app, app.get_name(), CLI::AppFormatMode::Normal) << "```\n\n";
  os << "## Subcommands\n\n";
  for (const auto* sub : app.get_subcommands({})) {
    os << "### " << sub->get_name() << "\n\n```\n" << sub->help("", CLI::AppFormatMode::Sub) << "```\n\n";
    for (const auto* nested : sub->get_subcommands({}))
      os << "#### " << sub->get_name() << " " << nested->get_name() << "\n\n```\n"
         << nested->help("", CLI::AppFormatMode::Sub) << "```\n\n";
  }
  os << "## Configuration keys\n\n"
     << "A configuration file is one JSON object with the sections below; every key is optional "
     << "and unknown keys are rejected.\n\n| key | default | meaning |\n|---|---|---|\n";
  std::vector<std::pair<std::string, json>> keys;
  flatten(to_json(AppConfig{}), "", keys);
  for (const auto& [key, def] : keys) {
    const auto it = key_docs().find(key);
    os << "| `" << key << "` | `" << def.dump() << "` | " << (it == key_docs().end() ? "" : it->second) << " |\n";
  }
  return os.str();
}

// ---- subcommands ---------------------------------------------------------------

struct Globals {
  std::optional<std::uint64_t> seed;
  int threads = 0;
};

AppConfig base_config(const std::string& config_path, const Globals& g) {
  AppConfig c = config_path.empty() ? AppConfig{} : load_app_config(config_path);
  if (g.seed) c.seed = *g.seed;
  return c;
}

int cmd_preprocess(const Globals& g, const std::string& config_path, const std::string& input,
                   const std::string& output, std::ostream& out) {
  auto c = base_config(config_path, g);
  if (!input.empty()) c.dataset.input = input;
  if (!output.empty()) c.dataset.bundle = output;
  if (c.dataset.input.empty()) throw ConfigError("dataset.input", "an input file is required (--input)");
  if (c.dataset.bundle.empty()) throw ConfigError("dataset.bundle", "an output path is required (--output)");
  std::ifstream in(c.dataset.input);
  if (!in) throw IoError("cannot open " + c.dataset.input);
  const auto bundle = preprocess(c, in);
  ingest::save_bundle(bundle, c.dataset.bundle);
  const auto& s = bundle.stats;
  out << json{{"bundle", c.dataset.bundle},
              {"dataset_hash", bundle.config_hash},
              {"vocab_hash", bundle.vocab.hash()},
              {"rows", s.rows},
              {"malformed", s.malformed},
              {"users", s.users},
              {"pois", s.pois},
              {"categories", s.categories},
              {"checkins", s.checkins},
              {"trajectories", s.trajectories},
              {"train", s.train},
              {"valid", s.valid},
              {"test", s.test},
              {"kmeans_iterations", s.kmeans_iterations},
              {"max_leaves_per_period", bundle.max_leaves_per_period}}
             .dump()
      << '\n';
  if (s.malformed > 0)
    std::clog << "warning: skipped " << s.malformed << " malformed row(s) of " << s.rows << '\n';
  return 0;
}

int cmd_train(const Globals& g, const std::string& config_path, const std::string& bundle_path,
              const std::string& out_dir, std::ostream& out) {
  auto c = base_config(config_path, g);
  if (!bundle_path.empty()) c.dataset.bundle = bundle_path;
  if (c.train.epochs == 0) throw ConfigError("train.epochs", "must be positive to produce a checkpoint");
  const auto bundle = load_required_bundle(c);
  if (bundle.split.train.empty()) throw DataError("the bundle has no training trajectories");
  auto net = make_model(c, bundle);
  make_dir(out_dir);
  const json effective = to_json(c);
  write_text(fs::path(out_dir) / "config.json", effective.dump(2) + "\n");

  train::FitOptions fo;
  fo.out_dir = out_dir;
  fo.config_hash = config_hash(c);
  fo.effective_config = effective;
  fo.on_epoch = [&](const train::EpochMetrics& m) {
    if (m.truncated_leaves > 0)
      std::clog << "warning: epoch " << m.epoch << " dropped " << m.truncated_leaves
                << " oldest leaf/leaves beyond the per-period cap\n";
    out << m.to_json().dump() << std::endl;
  };
  const auto res = train::fit(*net, bundle, c.train, fo, c.train_seed());

  json valid = json::array();
  for (const auto& m : res.history) valid.push_back(m.valid ? json(m.valid->acc_at(1)) : json(nullptr));
  const json summary{{"config_hash", fo.config_hash},
                     {"vocab_hash", bundle.vocab.hash()},
                     {"epochs", res.history.size()},
                     {"best_epoch", res.best_epoch},
                     {"valid_acc1", valid},
                     {"best_ckpt_sha256", sha256_file((fs::path(out_dir) / "best.ckpt").string())},
                     {"last_ckpt_sha256", sha256_file((fs::path(out_dir) / "last.ckpt").string())}};
  write_text(fs::path(out_dir) / "summary.json", summary.dump(2) + "\n");
  out << summary.dump() << '\n';
  return 0;
}

int cmd_evaluate(const Globals& g, const std::string& config_path, const std::string& ckpt_path,
                 const std::string& bundle_path, std::string split, bool last_prefix, bool shuffle,
                 std::string out_file, std::ostream& out) {
  auto ck = model::load_checkpoint(ckpt_path);
  auto c = config_for_checkpoint(config_path, ck.meta);
  if (g.seed) c.seed = *g.seed;
  if (!bundle_path.empty()) c.dataset.bundle = bundle_path;
  if (split.empty()) split = c.eval.split;
  const auto bundle = load_required_bundle(c);
  check_vocab(ck.meta.vocab_hash, bundle);
  auto opts = eval_options(c);
  opts.last_prefix_only = opts.last_prefix_only || last_prefix;
  opts.shuffle_slots = shuffle;
  const auto& trajs = bundle.split_named(split);
  if (trajs.empty()) throw DataError("split \"" + split + "\" is empty");
  const auto report = eval::evaluate(*ck.net, trajs, opts);
  json j = report.to_json();
  j["split"] = split;
  j["checkpoint"] = ckpt_path;
  j["checkpoint_sha256"] = sha256_file(ckpt_path);
  j["config_hash"] = ck.meta.config_hash;
  j["last_prefix_only"] = opts.last_prefix_only;
  j["shuffle_slots"] = opts.shuffle_slots;
  if (out_file.empty())
    out_file = (fs::path(ckpt_path).parent_path() / ("eval_" + split + ".json")).string();
  write_text(out_file, j.dump(2) + "\n");
  out << j.dump() << '\n';
  return 0;
}

int cmd_recommend(const Globals& g, const std::string& config_path, const std::string& ckpt_path,
                  const std::string& bundle_path, const std::string& user, const std::string& at_text,
                  std::size_t k, std::ostream& out) {
  auto ck = model::load_checkpoint(ckpt_path);
  auto c = config_for_checkpoint(config_path, ck.meta);
  if (g.seed) c.seed = *g.seed;
  if (!bundle_path.empty()) c.dataset.bundle = bundle_path;
  const auto bundle = load_required_bundle(c);
  check_vocab(ck.meta.vocab_hash, bundle);
  const auto uid = bundle.vocab.user_id(user);
  const std::int64_t at = parse_time_arg(at_text);
  const auto window = static_cast<std::int64_t>(bundle.window_hours * 3600.0);

  // The user's check-ins inside the trajectory window ending at --at.
  std::vector<CheckIn> history;
  for (const auto* part : {&bundle.split.train, &bundle.split.valid, &bundle.split.test})
    for (const auto& t : *part) {
      if (t.user_id != uid) continue;
      for (const auto& ci : t.checkins)
        if (ci.timestamp <= at && ci.timestamp >= at - window) history.push_back(ci);
      if (t.label && t.label->timestamp <= at && t.label->timestamp >= at - window)
        history.push_back(*t.label);
    }
  std::stable_sort(history.begin(), history.end(),
                   [](const CheckIn& a, const CheckIn& b) { return a.timestamp < b.timestamp; });
  history.erase(std::unique(history.begin(), history.end()), history.end());
  if (history.empty())
    throw DataError("user " + user + " has no check-ins in the " + std::to_string(bundle.window_hours) +
                    " h window ending at " + std::to_string(at));

  const auto& net = *ck.net;
  const auto tree = tree::build_mobility_tree(history, net.config().slots_per_day, net.config().tz_offset_seconds);
  ad::Tape tape(false);
  model::Pass pass(net, tape);
  const auto fr = net.forward(pass, tree);
  const auto scores = row_values(fr.pred.rec);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  k = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); });
  json recs = json::array();
  for (std::size_t r = 0; r < k; ++r) {
    const auto poi = order[r];
    recs.push_back({{"rank", r + 1},
                    {"poi", bundle.vocab.pois[poi]},
                    {"category", bundle.vocab.categories[bundle.vocab.poi_attrs[poi].category_id]},
                    {"score", scores[poi]}});
  }
  out << json{{"user", user}, {"at", at}, {"history", history.size()}, {"recommendations", recs}}.dump() << '\n';
  return 0;
}

int cmd_tree_dump(const Globals& g, const std::string& config_path, const std::string& bundle_path,
                  const std::string& split, std::size_t sample, int slots, std::ostream& out) {
  auto c = base_config(config_path, g);
  if (!bundle_path.empty()) c.dataset.bundle = bundle_path;
  const auto bundle = load_required_bundle(c);
  const int p = slots > 0 ? slots : (config_path.empty() ? bundle.slots_per_day : c.model.slots_per_day);
  tree::validate_slots_per_day(p);
  const auto samples = ingest::make_supervised_samples(bundle.split_named(split), c.train.last_step_only);
  if (sample >= samples.size())
    throw ConfigError("--sample", "index " + std::to_string(sample) + " is out of range (split \"" + split +
                                      "\" has " + std::to_string(samples.size()) + " samples)");
  const auto& s = samples[sample];
  const auto tree = tree::build_mobility_tree(s.checkins, p, bundle.tz_offset_seconds);
  out << "sample " << sample << " of split " << split << ", user " << bundle.vocab.users[s.user_id]
      << ", P=" << p << "\n"
      << tree::render(tree);
  if (s.label)
    out << "label: poi " << bundle.vocab.pois[s.label->poi_id] << " at " << s.label->timestamp << " (slot "
        << tree::period_index(s.label->timestamp, p, bundle.tz_offset_seconds) << ")\n";
  return 0;
}

int cmd_grad_check(const Globals& g, const std::string& config_path, bool dropout, std::size_t per_tensor,
                   std::ostream& out) {
  model::ModelConfig cfg = config_path.empty() ? model::grad_check_config() : load_app_config(config_path).model;
  if (dropout) {
    cfg.dropout_embed = 0.3;
    cfg.dropout_param = 0.4;
  }
  ad::GradCheckOptions opts;
  opts.samples_per_tensor = per_tensor;
  bool ok = true;
  for (auto root : {model::RootMode::CurrentDay, model::RootMode::SuperRoot}) {
    cfg.root = root;
    const auto rep = model::full_model_grad_check(cfg, g.seed.value_or(11), opts);
    ok = ok && rep.passed;
    const auto worst = std::max_element(rep.entries.begin(), rep.entries.end(),
                                        [](const auto& a, const auto& b) { return a.rel_error < b.rel_error; });
    json j{{"root", root == model::RootMode::CurrentDay ? "current_day" : "super_root"},
           {"coordinates", rep.entries.size()},
           {"max_rel_error", rep.max_rel_error},
           {"tolerance", opts.tol},
           {"passed", rep.passed}};
    if (worst != rep.entries.end()) j["worst_tensor"] = worst->tensor;
    out << j.dump() << '\n';
  }
  if (!ok) throw NumericError("gradient check failed");
  return 0;
}

int cmd_synth(const Globals& g, synth::SynthOptions so, const std::string& out_csv, const std::string& config_out,
              std::ostream& out) {
  so.seed = g.seed.value_or(so.seed);
  const auto records = synth::generate(so);
  {
    std::ostringstream csv;
    synth::write_csv(records, csv);
    write_text(out_csv, csv.str());
  }
  if (!config_out.empty()) {
    AppConfig c;
    c.seed = so.seed;
    c.dataset.input = out_csv;
    auto& p = c.dataset.preprocess;
    p.format.has_header = true;
    p.format.time_format = TimeFormat::Epoch;
    p.min_user_checkins = 2;
    p.min_poi_visits = 1;
    p.geo_clusters = 4;
    c.model.d_user = c.model.d_poi = c.model.d_cat = c.model.d_geo = 16;
    c.model.hidden = 32;
    c.model.ff_dim = 64;
    c.model.layers = 1;
    c.model.heads = 2;
    c.model.slots_per_day = so.planted_slots;
    c.model.dropout_embed = 0.0;
    c.model.dropout_param = 0.0;
    c.train.lr = 5e-3;
    c.train.epochs = 30;
    c.train.batch_size = 32;
    write_text(config_out, to_json(c).dump(2) + "\n");
  }
  out << json{{"csv", out_csv}, {"records", records.size()}, {"seed", so.seed}}.dump() << '\n';
  return 0;
}

int cmd_dump_embeddings(const Globals& g, const std::string& config_path, const std::string& ckpt_path,
                        const std::string& bundle_path, const std::string& split, std::size_t limit,
                        const std::string& out_file, std::ostream& out) {
  auto ck = model::load_checkpoint(ckpt_path);
  auto c = config_for_checkpoint(config_path, ck.meta);
  if (g.seed) c.seed = *g.seed;
  if (!bundle_path.empty()) c.dataset.bundle = bundle_path;
  const auto bundle = load_required_bundle(c);
  check_vocab(ck.meta.vocab_hash, bundle);
  const auto& net = *ck.net;
  auto& params = ck.net->params();
  const auto table_rows = [&](const std::string& name, std::size_t r) {
    const auto& t = params[params.id(name)];
    return std::vector<Real>(t.data().begin() + static_cast<std::ptrdiff_t>(r * t.cols()),
                             t.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * t.cols()));
  };
  std::ostringstream os;
  for (std::size_t u = 0; u < bundle.vocab.users.size(); ++u)
    os << json{{"kind", "user"}, {"id", bundle.vocab.users[u]}, {"vector", table_rows("emb.user", u)}}.dump() << '\n';
  for (std::size_t p = 0; p < bundle.vocab.pois.size(); ++p)
    os << json{{"kind", "poi"},
               {"id", bundle.vocab.pois[p]},
               {"category", bundle.vocab.categories[bundle.vocab.poi_attrs[p].category_id]},
               {"geo_cluster", bundle.vocab.poi_attrs[p].geo_cluster_id},
               {"vector", table_rows("emb.poi", p)}}
              .dump()
       << '\n';

  auto samples = ingest::make_supervised_samples(bundle.split_named(split), false);
  if (limit > 0 && samples.size() > limit) samples.resize(limit);
  const int p = net.config().slots_per_day;
  std::vector<std::string> lines(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    const auto& s = samples[i];
    const auto tree = tree::build_mobility_tree(s.checkins, p, net.config().tz_offset_seconds);
    ad::Tape tape(false);
    model::Pass pass(net, tape);
    const auto fr = net.forward(pass, tree);
    const auto& cur = tree.current;
    const auto& po = fr.states.period_out[cur.day][cur.period];
    const auto last = tree.days[cur.day].periods[cur.period].leaves[cur.leaf];
    json j{{"kind", "sample"},
           {"index", i},
           {"user", bundle.vocab.users[s.user_id]},
           {"slot", tree::period_index(s.checkins.back().timestamp, p, net.config().tz_offset_seconds)},
           {"label_poi", bundle.vocab.pois[s.label->poi_id]},
           {"root", row_values(fr.states.root)},
           {"day", row_values(fr.states.day_h[cur.day])}};
    if (po.valid()) j["period"] = row_values(po);
    if (fr.states.leaf_out[last].valid()) j["last_checkin"] = row_values(fr.states.leaf_out[last]);
    lines[i] = j.dump();
  });
  for (const auto& l : lines) os << l << '\n';
  write_text(out_file, os.str());
  out << json{{"out", out_file},
              {"users", bundle.vocab.users.size()},
              {"pois", bundle.vocab.pois.size()},
              {"samples", samples.size()}}
             .dump()
      << '\n';
  return 0;
}

int cmd_sweep(const Globals& g, const std::string& config_path, const std::string& input, bool use_synth,
              const std::vector<int>& slots, const std::string& out_dir, std::ostream& out) {
  auto c = base_config(config_path, g);
  std::string csv;
  if (use_synth) {
    synth::SynthOptions so;
    so.users = 40;
    so.days = 10;
    so.late_holdout = true;
    so.seed = c.seed;
    std::ostringstream os;
    synth::write_csv(synth::generate(so), os);
    csv = os.str();
    if (config_path.empty()) {
      auto& p = c.dataset.preprocess;
      p.format.has_header = true;
      p.format.time_format = TimeFormat::Epoch;
      p.min_user_checkins = 2;
      p.min_poi_visits = 1;
      p.geo_clusters = 4;
    }
  } else {
    const std::string path = input.empty() ? c.dataset.input : input;
    if (path.empty()) throw ConfigError("dataset.input", "an input file is required (--input or --synth)");
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream os;
    os << in.rdbuf();
    csv = os.str();
  }
  make_dir(out_dir);
  const auto rows = granularity_sweep(c, csv, slots, out_dir);
  const auto table = sweep_table(rows);
  json j = json::array();
  for (const auto& r : rows)
    j.push_back({{"slots_per_day", r.slots_per_day},
                 {"best_epoch", r.best_epoch},
                 {"valid_acc1", r.valid_acc1},
                 {"test", r.test.to_json()}});
  write_text(fs::path(out_dir) / "sweep.md", table);
  write_text(fs::path(out_dir) / "sweep.json", j.dump(2) + "\n");
  out << table;
  return 0;
}

int report_error(std::ostream& err, const std::string& kind, const std::string& message, const std::string& key = "") {
  json j{{"error", kind}, {"message", message}};
  if (!key.empty()) j["key"] = key;
  err << j.dump() << '\n';
  return kind == "config" || kind == "usage" ? 2 : kind == "io" ? 3 : kind == "data" ? 4 : 1;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"MTNet: Mobility Tree Network for next point-of-interest recommendation.", "mtnet"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--threads", g.threads, "Worker threads (default: all logical cores)")->check(CLI::NonNegativeNumber);
  app.add_option("--seed", g.seed, "Master seed; overrides the configuration's seed");

  std::string config, input, output, bundle, ckpt, out_dir, split, dump_split, de_split, user, at, out_file, config_out;
  bool last_prefix = false, shuffle = false, dropout = false, use_synth = false;
  std::size_t k = 10, sample = 0, per_tensor = 16, limit = 0;
  int slots = 0;
  std::vector<int> sweep_slots{2, 4, 12, 24};
  synth::SynthOptions so;

  auto* pre = app.add_subcommand("preprocess", "Parse, filter, cluster and split raw check-ins into a bundle");
  pre->add_option("--input", input, "Raw check-in file (default: dataset.input)");
  pre->add_option("--config", config, "JSON configuration");
  pre->add_option("--output", output, "Bundle to write (default: dataset.bundle)");

  auto* tr = app.add_subcommand("train", "Train a model; writes config.json, metrics.jsonl, best.ckpt, last.ckpt, summary.json");
  tr->add_option("--bundle", bundle, "Preprocessed bundle (default: dataset.bundle)");
  tr->add_option("--config", config, "JSON configuration");
  tr->add_option("--out", out_dir, "Output directory")->required();

  auto* ev = app.add_subcommand("evaluate", "Acc@k and MRR of a checkpoint on a bundle split");
  ev->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  ev->add_option("--bundle", bundle, "Bundle (default: dataset.bundle of the configuration)");
  ev->add_option("--config", config, "JSON configuration (default: the one stored in the checkpoint)");
  ev->add_option("--split", split, "train, valid or test (default: eval.split)");
  ev->add_flag("--last-prefix-only", last_prefix, "Score only the final prefix of each trajectory");
  ev->add_flag("--shuffle-slots", shuffle, "Present every sample with a random derangement of the day's slots");
  ev->add_option("--out", out_file, "Report file (default: eval_<split>.json next to the checkpoint)");

  auto* rec = app.add_subcommand("recommend", "Top-k POIs for a user at a time, from the user's recent check-ins");
  rec->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  rec->add_option("--bundle", bundle, "Bundle (default: dataset.bundle of the configuration)");
  rec->add_option("--config", config, "JSON configuration (default: the one stored in the checkpoint)");
  rec->add_option("--user", user, "Raw user id")->required();
  rec->add_option("--at", at, "Query time: epoch seconds or ISO 8601")->required();
  rec->add_option("-k,--k", k, "Number of recommendations")->check(CLI::PositiveNumber);

  auto* tree_cmd = app.add_subcommand("tree", "Mobility tree utilities");
  tree_cmd->require_subcommand(1);
  auto* dump = tree_cmd->add_subcommand("dump", "Render the mobility tree of one supervised sample");
  dump->add_option("--bundle", bundle, "Bundle (default: dataset.bundle)");
  dump->add_option("--config", config, "JSON configuration");
  dump->add_option("--split", dump_split, "train, valid or test")->default_val("train");
  dump->add_option("--sample", sample, "Sample index within the split's prefix expansion")->required();
  dump->add_option("--slots", slots, "Slots per day (default: model.slots_per_day, else the bundle's)");

  auto* gc = app.add_subcommand("grad-check", "Finite-difference check of the full model on a fixed two-day tree");
  gc->add_option("--config", config, "Use this configuration's model section instead of the small default");
  gc->add_flag("--dropout", dropout, "Enable dropout with a fixed mask");
  gc->add_option("--per-tensor", per_tensor, "Coordinates sampled per tensor")->check(CLI::PositiveNumber);

  auto* sy = app.add_subcommand("synth", "Write a synthetic check-in log with planted per-slot habits");
  sy->add_option("--out", out_file, "CSV file to write")->required();
  sy->add_option("--config-out", config_out, "Also write a matching configuration");
  sy->add_option("--users", so.users, "Users")->capture_default_str();
  sy->add_option("--days", so.days, "Days (one trajectory per user-day)")->capture_default_str();
  sy->add_option("--planted-slots", so.planted_slots, "Planted slots per day")->capture_default_str();
  sy->add_option("--active-slots", so.active_slots, "Active slots per user-day")->capture_default_str();
  sy->add_option("--targets", so.target_pois, "Target POI pool size")->capture_default_str();
  sy->add_option("--categories", so.categories, "Categories")->capture_default_str();
  sy->add_option("--noise", so.noise, "Probability of a random target visit")->capture_default_str();
  sy->add_flag("--late-holdout", so.late_holdout, "Shift visits of the last days to unseen hours");
  sy->add_option("--holdout-fraction", so.holdout_fraction, "Fraction of late days")->capture_default_str();

  auto* de = app.add_subcommand("dump-embeddings", "Export user/POI embeddings and node states as JSON lines");
  de->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  de->add_option("--bundle", bundle, "Bundle (default: dataset.bundle of the configuration)");
  de->add_option("--config", config, "JSON configuration (default: the one stored in the checkpoint)");
  de->add_option("--split", de_split, "Split whose samples are exported")->default_val("test");
  de->add_option("--limit", limit, "Maximum samples (0: all)");
  de->add_option("--out", out_file, "Output file")->required();

  auto* sw = app.add_subcommand("sweep", "Train and evaluate one model per slots-per-day value");
  sw->add_option("--input", input, "Raw check-in file (default: dataset.input)");
  sw->add_flag("--synth", use_synth, "Use a built-in late-holdout synthetic dataset (40 users x 10 days, 4 planted slots)");
  sw->add_option("--config", config, "JSON configuration");
  sw->add_option("--slots", sweep_slots, "Values of P")->delimiter(',')->capture_default_str();
  sw->add_option("--out", out_dir, "Output directory")->required();

  auto* ref = app.add_subcommand("reference", "Print the Markdown reference of flags and configuration keys");

  std::vector<std::string> argv_store{"mtnet"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    return report_error(err, "usage", e.what());
  }

  try {
    if (g.threads > 0) omp_set_num_threads(g.threads);
    if (pre->parsed()) return cmd_preprocess(g, config, input, output, out);
    if (tr->parsed()) return cmd_train(g, config, bundle, out_dir, out);
    if (ev->parsed()) return cmd_evaluate(g, config, ckpt, bundle, split, last_prefix, shuffle, out_file, out);
    if (rec->parsed()) return cmd_recommend(g, config, ckpt, bundle, user, at, k, out);
    if (dump->parsed()) return cmd_tree_dump(g, config, bundle, dump_split, sample, slots, out);
    if (gc->parsed()) return cmd_grad_check(g, config, dropout, per_tensor, out);
    if (sy->parsed()) return cmd_synth(g, so, out_file, config_out, out);
    if (de->parsed()) return cmd_dump_embeddings(g, config, ckpt, bundle, de_split, limit, out_file, out);
    if (sw->parsed()) return cmd_sweep(g, config, input, use_synth, sweep_slots, out_dir, out);
    if (ref->parsed()) {
      out << reference_page(app);
      return 0;
    }
    return report_error(err, "usage", "no subcommand");
  } catch (const ConfigError& e) {
    return report_error(err, "config", e.what(), e.key_path());
  } catch (const IoError& e) {
    return report_error(err, "io", e.what());
  } catch (const DataError& e) {
    return report_error(err, "data", e.what());
  } catch (const NumericError& e) {
    return report_error(err, "numeric", e.what());
  } catch (const std::exception& e) {
    return report_error(err, "error", e.what());
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace mtnet::cli
