// Acceptance run: one PASS/FAIL line per gating criterion, exit status 1 if
// any criterion fails. An optional real-data line runs only when
// MTNET_NYC_CSV names a Foursquare NYC check-in file.

#include <omp.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include "mtnet/checkpoint.hpp"
#include "mtnet/cli.hpp"
#include "mtnet/diagnostics.hpp"
#include "mtnet/errors.hpp"
#include "mtnet/eval.hpp"
#include "mtnet/hash.hpp"
#include "mtnet/model.hpp"
#include "mtnet/synth.hpp"
#include "mtnet/train.hpp"
#include "mtnet/tree.hpp"
#include "../test_util.hpp"

using namespace mtnet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(const std::string& name, double limit_seconds, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (secs > limit_seconds) {
    o.pass = false;
    o.detail += "; exceeded the " + std::to_string(static_cast<int>(limit_seconds)) + " s budget";
  }
  if (!o.pass) ++failures;
  std::cout << (o.pass ? "PASS" : "FAIL") << "  " << name << "  (" << o.detail << "; " << std::fixed
            << std::setprecision(1) << secs << " s)" << std::endl;
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

model::ModelConfig small_config(int slots) {
  model::ModelConfig c;
  c.d_user = c.d_poi = c.d_cat = c.d_geo = 16;
  c.hidden = 32;
  c.ff_dim = 64;
  c.layers = 1;
  c.heads = 2;
  c.slots_per_day = slots;
  c.dropout_embed = 0.0;
  c.dropout_param = 0.0;
  return c;
}

cli::AppConfig synth_app_config(int slots) {
  cli::AppConfig c;
  c.seed = 42;
  auto& p = c.dataset.preprocess;
  p.format.has_header = true;
  p.format.time_format = TimeFormat::Epoch;
  p.min_user_checkins = 2;
  p.min_poi_visits = 1;
  p.geo_clusters = 4;
  c.model = small_config(slots);
  c.train.lr = 5e-3;
  c.train.batch_size = 32;
  return c;
}

std::string synth_csv(const synth::SynthOptions& so) {
  std::ostringstream os;
  synth::write_csv(synth::generate(so), os);
  return os.str();
}

// ---- criteria ----------------------------------------------------------------

Outcome gradient_fidelity() {
  ad::GradCheckOptions opts;
  opts.h = 1e-5;
  opts.samples_per_tensor = 1u << 20;  // every coordinate
  double worst = 0;
  std::size_t coords = 0;
  bool pass = true;
  for (auto root : {model::RootMode::CurrentDay, model::RootMode::SuperRoot}) {
    auto cfg = model::grad_check_config();
    cfg.root = root;
    const auto rep = model::full_model_grad_check(cfg, 11, opts);
    worst = std::max(worst, static_cast<double>(rep.max_rel_error));
    coords += rep.entries.size();
    pass = pass && rep.passed && rep.max_rel_error < 1e-4;
  }
  return {pass, "max relative error " + fmt(worst, 3) + " over " + std::to_string(coords) +
                    " coordinates, both root modes"};
}

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Outcome irc_oracle() {
  ad::Rng rng(6);
  const std::size_t in = 5, hid = 4;
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    ad::Tape t;
    const auto mat = [&](std::size_t r, std::size_t c, double amp) {
      return t.variable(test::random_tensor(r, c, rng, amp));
    };
    model::IrcWeights w;
    w.w_i = mat(in, hid, 0.5);
    w.w_f = mat(in, hid, 0.5);
    w.w_o = mat(in, hid, 0.5);
    w.w_u = mat(in, hid, 0.5);
    w.u_i = mat(hid, hid, 0.5);
    w.u_o = mat(hid, hid, 0.5);
    w.u_u = mat(hid, hid, 0.5);
    w.u_f = mat(hid, hid, 0.5);
    w.b_i = mat(1, hid, 0.5);
    w.b_f = mat(1, hid, 0.5);
    w.b_o = mat(1, hid, 0.5);
    w.b_u = mat(1, hid, 0.5);
    w.fanout = 1;
    w.hidden = hid;
    const auto x = mat(1, in, 2.0);
    const auto hp = mat(1, hid, 1.0);
    const auto cp = mat(1, hid, 2.0);
    const model::IrcChild kid{0, hp, cp};
    const auto s = model::irc(x, std::span<const model::IrcChild>(&kid, 1), w);
    // Chain LSTM: gate = act(x W + h U + b); c = i*u + f*c_prev; h = o*tanh(c).
    const auto affine = [&](const ad::Var& W, const ad::Var& U, const ad::Var& b, std::size_t j) {
      double acc = b.value()[j];
      for (std::size_t k = 0; k < in; ++k) acc += x.value()[k] * W.value()[k * hid + j];
      for (std::size_t k = 0; k < hid; ++k) acc += hp.value()[k] * U.value()[k * hid + j];
      return acc;
    };
    for (std::size_t j = 0; j < hid; ++j) {
      const double i = sigm(affine(w.w_i, w.u_i, w.b_i, j));
      const double f = sigm(affine(w.w_f, w.u_f, w.b_f, j));
      const double o = sigm(affine(w.w_o, w.u_o, w.b_o, j));
      const double u = std::tanh(affine(w.w_u, w.u_u, w.b_u, j));
      const double c = i * u + f * cp.value()[j];
      const double h = o * std::tanh(c);
      worst = std::max({worst, std::abs(c - s.c.value()[j]), std::abs(h - s.h.value()[j])});
    }
  }
  return {worst < 1e-10, "max |diff| " + fmt(worst, 3) + " over 100 random inputs"};
}

Outcome metric_oracles() {
  ad::Rng rng(77);
  std::size_t acc_mismatch = 0;
  double mrr_worst = 0;
  for (int f = 0; f < 1000; ++f) {
    const std::size_t n = 1 + rng() % 30, pois = 1 + rng() % 40;
    const auto scores = test::random_scores(n, pois, rng);
    std::vector<std::size_t> truth(n);
    for (auto& t : truth) t = rng() % pois;
    std::vector<std::size_t> ranks(n);
    for (std::size_t i = 0; i < n; ++i) ranks[i] = test::oracle_rank(scores[i], truth[i]);
    for (std::size_t k : {1, 5, 10}) {
      std::size_t hits = 0;
      for (auto r : ranks) hits += r <= k;
      acc_mismatch += eval::acc_at_k(scores, truth, k) != static_cast<double>(hits) / static_cast<double>(n);
    }
    double rr = 0;
    for (auto r : ranks) rr += 1.0 / static_cast<double>(r);
    mrr_worst = std::max(mrr_worst, std::abs(eval::mrr(scores, truth) - rr / static_cast<double>(n)));
  }
  return {acc_mismatch == 0 && mrr_worst < 1e-12,
          std::to_string(acc_mismatch) + " Acc@K mismatches, max MRR diff " + fmt(mrr_worst, 3) + " on 1000 fixtures"};
}

Outcome loss_identity() {
  const auto fx = model::grad_check_fixture();
  const auto cfg = model::grad_check_config();
  const auto tree = tree::build_mobility_tree(fx.prefix, cfg.slots_per_day);
  model::MTNet net(cfg, fx.vocab, 3, 5);
  // Fresh model: every log sigma is 0, so L_final = (L_l + L_g + L_c) / 2 exactly.
  double sum_gap;
  {
    ad::Tape t(false);
    model::Pass p(net, t);
    model::LossParts parts;
    const auto fr = net.forward(p, tree);
    const double L = net.loss(p, fr.pred, fx.label, &parts).item();
    sum_gap = std::abs(L - (parts.poi + parts.geo + parts.cat) / 2);
  }
  // Zero POI heads: uniform logits, each cross-entropy term equals ln |L|.
  auto& ps = net.params();
  for (const char* head : {"head.day", "head.period", "head.checkin"})
    for (const char* part : {".W", ".b"})
      for (auto& v : ps[ps.id(std::string(head) + part)].data()) v = 0;
  ad::Tape t(false);
  model::Pass p(net, t);
  model::LossParts parts;
  net.loss(p, net.forward(p, tree).pred, fx.label, &parts);
  const double ln_l = std::log(static_cast<double>(fx.vocab.pois));
  const double ce_gap = std::max({std::abs(parts.ce_day - ln_l), std::abs(parts.ce_period - ln_l),
                                  std::abs(parts.ce_checkin - ln_l)});
  return {sum_gap == 0.0 && ce_gap < 1e-9,
          "|L_final - sum/2| = " + fmt(sum_gap, 3) + ", max |CE - ln|L|| = " + fmt(ce_gap, 3)};
}

Outcome tree_invariants() {
  ad::Rng rng(99);
  const int slot_choices[] = {1, 2, 3, 4, 6, 8, 12, 24};
  std::size_t order_violations = 0, slot_violations = 0, structure_violations = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const int p = slot_choices[rng() % 8];
    const std::int64_t tz = static_cast<std::int64_t>(rng() % 49) * 1800 - 43200;
    const std::size_t len = 1 + rng() % 40;
    std::int64_t t = 1333324800 + static_cast<std::int64_t>(rng() % (86400 * 400));
    std::vector<CheckIn> pre(len);
    for (std::size_t i = 0; i < len; ++i) {
      pre[i].user_id = 1;
      pre[i].poi_id = static_cast<std::uint32_t>(rng() % 100);
      pre[i].timestamp = t;
      t += static_cast<std::int64_t>(rng() % 14400) * (rng() % 4 == 0 ? 0 : 1);  // ties included
    }
    const auto tr = tree::build_mobility_tree(pre, p, tz);
    const auto order = tree::leaf_order(tr);
    std::vector<CheckIn> rebuilt;
    for (auto pos : order) rebuilt.push_back(tr.leaf(pos));
    order_violations += rebuilt != pre;
    std::size_t leaves = 0;
    for (std::size_t d = 0; d < tr.days.size(); ++d) {
      const auto& day = tr.days[d];
      if (d > 0 && tr.days[d - 1].day_key >= day.day_key) ++structure_violations;
      for (std::size_t k = 0; k < day.periods.size(); ++k) {
        const auto& per = day.periods[k];
        if (per.leaves.empty() || (k > 0 && day.periods[k - 1].slot_index >= per.slot_index)) ++structure_violations;
        for (auto pos : per.leaves) {
          ++leaves;
          const auto ts = tr.leaf(pos).timestamp;
          if (tree::period_index(ts, p, tz) != per.slot_index || day_key(ts, tz) != day.day_key) ++slot_violations;
        }
      }
    }
    const auto& cur = tr.current;
    if (leaves != len || tr.days[cur.day].periods[cur.period].leaves[cur.leaf] != len - 1) ++structure_violations;
  }
  return {order_violations + slot_violations + structure_violations == 0,
          std::to_string(order_violations) + " order, " + std::to_string(slot_violations) + " slot, " +
              std::to_string(structure_violations) + " structure violations on 10000 trajectories"};
}

Outcome overfit_smoke() {
  synth::SynthOptions so;  // 20 users x 5 days, 4 planted 6-hour slots
  auto app = synth_app_config(4);
  std::istringstream in(synth_csv(so));
  const auto bundle = cli::preprocess(app, in);
  auto net = cli::make_model(app, bundle);
  const auto samples = train::prepare_samples(net->config(), bundle.split.train, false);
  auto opt = train::OptimizerState::for_params(net->params());
  double acc = 0;
  std::size_t epochs = 0;
  while (epochs < 200 && acc < 0.95) {
    for (int i = 0; i < 5; ++i, ++epochs) train::train_epoch(*net, samples, opt, app.train, epochs, app.train_seed());
    acc = eval::evaluate(*net, bundle.split.train).acc_at(1);
  }
  eval::EvalOptions shuffled;
  shuffled.shuffle_slots = true;
  shuffled.seed = app.eval_seed();
  const double acc_shuffled = eval::evaluate(*net, bundle.split.train, shuffled).acc_at(1);
  return {acc >= 0.95 && acc - acc_shuffled >= 0.3,
          "train Acc@1 " + fmt(acc) + " after " + std::to_string(epochs) + " epochs; shuffled slots " +
              fmt(acc_shuffled) + " (drop " + fmt(acc - acc_shuffled) + ")"};
}

Outcome granularity_sweep() {
  synth::SynthOptions so;
  so.users = 40;
  so.days = 10;
  so.late_holdout = true;
  auto app = synth_app_config(4);
  app.train.epochs = 20;
  const std::vector<int> slots{2, 4, 12, 24};
  const auto rows = cli::granularity_sweep(app, synth_csv(so), slots);
  std::cout << cli::sweep_table(rows);
  std::size_t best = 0;
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (rows[i].test.acc_at(1) > rows[best].test.acc_at(1)) best = i;
  bool strict = true;
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (i != best && rows[i].test.acc_at(1) >= rows[best].test.acc_at(1)) strict = false;
  return {rows.size() == 4 && rows[best].slots_per_day == 4 && strict,
          "best P = " + std::to_string(rows[best].slots_per_day) + " with test Acc@1 " +
              fmt(rows[best].test.acc_at(1)) + " (planted P = 4)"};
}

Outcome determinism() {
  const auto dir = fs::temp_directory_path() / "mtnet_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  synth::SynthOptions so;
  so.users = 10;
  auto app = synth_app_config(4);
  app.train.epochs = 3;
  app.model.dropout_embed = 0.3;  // exercise the seeded dropout streams
  app.model.dropout_param = 0.3;
  const std::string csv = synth_csv(so);
  std::vector<std::string> hashes;
  const int saved = omp_get_max_threads();
  for (int run = 0; run < 2; ++run) {
    omp_set_num_threads(run == 0 ? 1 : 4);
    std::istringstream in(csv);
    const auto bundle = cli::preprocess(app, in);
    auto net = cli::make_model(app, bundle);
    train::FitOptions fo;
    fo.out_dir = (dir / ("run" + std::to_string(run))).string();
    fo.config_hash = cli::config_hash(app);
    fo.effective_config = cli::to_json(app);
    train::fit(*net, bundle, app.train, fo, app.train_seed());
    hashes.push_back(sha256_file(fo.out_dir + "/last.ckpt") + sha256_file(fo.out_dir + "/best.ckpt"));
  }
  omp_set_num_threads(saved);
  fs::remove_all(dir);
  return {hashes[0] == hashes[1], "checkpoint hashes " + std::string(hashes[0] == hashes[1] ? "identical" : "differ") +
                                      " across two seeded runs (1 vs 4 threads), last.ckpt " + hashes[0].substr(0, 12)};
}

Outcome ablation_plumbing() {
  const auto fx = model::grad_check_fixture();
  const auto base_cfg = model::grad_check_config();
  const auto tree = tree::build_mobility_tree(fx.prefix, base_cfg.slots_per_day);
  const auto names = [](const model::MTNet& m) {
    std::set<std::string> s;
    for (ad::ParamId i = 0; i < m.params().size(); ++i) s.insert(m.params().name(i));
    return s;
  };
  const model::MTNet base(base_cfg, fx.vocab, 3, 1);
  const auto base_names = names(base);
  struct Run {
    std::set<std::string> removed, added;
    model::ForwardResult fr;
    model::LossParts parts;
    double loss;
  };
  const auto run = [&](const std::function<void(model::Ablations&)>& set) {
    auto cfg = base_cfg;
    set(cfg.ablations);
    const model::MTNet m(cfg, fx.vocab, 3, 1);
    Run r;
    for (const auto& n : base_names)
      if (!names(m).count(n)) r.removed.insert(n);
    for (const auto& n : names(m))
      if (!base_names.count(n)) r.added.insert(n);
    ad::Tape t(false);
    model::Pass p(m, t);
    r.fr = m.forward(p, tree);
    r.loss = m.loss(p, r.fr.pred, fx.label, &r.parts).item();
    return r;
  };
  const auto all_prefixed = [](const std::set<std::string>& s, std::initializer_list<std::string> prefixes) {
    for (const auto& x : s) {
      bool ok = false;
      for (const auto& p : prefixes) ok = ok || x.rfind(p, 0) == 0;
      if (!ok) return false;
    }
    return !s.empty();
  };
  std::vector<std::string> failed;
  const auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failed.push_back(what);
  };
  {
    const auto r = run([](auto& a) { a.no_multitask = true; });
    expect(r.removed == std::set<std::string>{"loss.log_sigma_poi", "loss.log_sigma_geo", "loss.log_sigma_cat"} &&
               r.added.empty(),
           "no_multitask params");
    expect(r.loss == r.parts.poi + r.parts.geo + r.parts.cat, "no_multitask plain sum");
  }
  {
    const auto r = run([](auto& a) { a.no_geo_head = true; });
    expect(r.removed == std::set<std::string>{"head.geo.W", "head.geo.b", "loss.log_sigma_geo"} && r.added.empty(),
           "no_geo_head params");
    expect(!r.fr.pred.geo.valid() && r.parts.geo == 0 && r.loss == (r.parts.poi + r.parts.cat) / 2, "no_geo_head loss");
  }
  {
    const auto r = run([](auto& a) { a.no_cat_head = true; });
    expect(r.removed == std::set<std::string>{"head.cat.W", "head.cat.b", "loss.log_sigma_cat"} && r.added.empty(),
           "no_cat_head params");
    expect(!r.fr.pred.cat.valid() && r.parts.cat == 0 && r.loss == (r.parts.poi + r.parts.geo) / 2, "no_cat_head loss");
  }
  {
    const auto r = run([](auto& a) { a.no_iac = true; });
    expect(all_prefixed(r.removed, {"iac."}) && r.added.empty(), "no_iac params");
    bool identity = true;
    for (std::size_t i = 0; i < fx.prefix.size(); ++i)
      identity = identity && r.fr.states.leaf_out[i].index() == r.fr.states.leaf_embed[i].index();
    for (std::size_t d = 0; d < r.fr.states.period_h.size(); ++d)
      for (std::size_t k = 0; k < r.fr.states.period_h[d].size(); ++k)
        identity = identity && r.fr.states.period_out[d][k].index() == r.fr.states.period_h[d][k].index();
    expect(identity, "no_iac identity steps");
  }
  {
    const auto r = run([](auto& a) { a.no_irc = true; });
    expect(all_prefixed(r.removed, {"irc.", "emb.period_slot", "emb.dow"}) &&
               r.added == std::set<std::string>{"pool.period.W", "pool.period.b", "pool.day.W", "pool.day.b"},
           "no_irc params");
  }
  {
    const auto r = run([](auto& a) { a.no_aux_node_preds = true; });
    expect(r.removed == std::set<std::string>{"head.period.W", "head.period.b"} && r.added.empty(),
           "no_aux_node_preds params");
    expect(r.fr.pred.rec.index() == r.fr.pred.checkin.index() && r.parts.ce_period == 0,
           "no_aux_node_preds rec = last check-in logits");
  }
  std::string detail = "6 flags checked";
  for (const auto& f : failed) detail += "; failed: " + f;
  return {failed.empty(), detail};
}

void nyc_best_effort() {
  const char* path = std::getenv("MTNET_NYC_CSV");
  if (path == nullptr || *path == '\0') {
    std::cout << "SKIP  [non-gating] NYC best-effort run (set MTNET_NYC_CSV to a Foursquare NYC TSV)" << std::endl;
    return;
  }
  try {
    cli::AppConfig app;
    auto& f = app.dataset.preprocess.format;
    f.delimiter = '\t';
    f.time_format = TimeFormat::Ctime;
    f.user = {0, ""};
    f.poi = {1, ""};
    f.category = {3, ""};
    f.lat = {4, ""};
    f.lon = {5, ""};
    f.time = {7, ""};
    app.model.slots_per_day = 4;
    std::ifstream in(path);
    if (!in) throw IoError(std::string("cannot open ") + path);
    const auto bundle = cli::preprocess(app, in);
    auto net = cli::make_model(app, bundle);
    const auto res = train::fit(*net, bundle, app.train, {}, app.train_seed());
    train::restore_params(net->params(), res.best_params);
    const auto rep = eval::evaluate(*net, bundle.split.test);
    const double a1 = rep.acc_at(1);
    std::cout << "INFO  [non-gating] NYC Acc@1 " << fmt(a1) << " (expected band [0.20, 0.30]: "
              << (a1 >= 0.2 && a1 <= 0.3 ? "inside" : "outside") << ")" << std::endl;
  } catch (const std::exception& e) {
    std::cout << "INFO  [non-gating] NYC run failed: " << e.what() << std::endl;
  }
}

}  // namespace

int main() {
  criterion("Gradient fidelity: full-model finite differences, max rel. error < 1e-4", 120, gradient_fidelity);
  criterion("IRC oracle: N=1 Tree-LSTM equals a chain LSTM to 1e-10", 5, irc_oracle);
  criterion("Metric oracles: Acc@K exact, MRR within 1e-12", 5, metric_oracles);
  criterion("Loss identity: log sigma = 0 halves the sum; uniform logits give ln|L|", 5, loss_identity);
  criterion("Tree invariants: leaf order and slot containment on 10k trajectories", 10, tree_invariants);
  criterion("Overfit smoke: train Acc@1 >= 0.95 within 200 epochs; shuffled slots drop >= 0.3", 300, overfit_smoke);
  criterion("Granularity sweep: P in {2,4,12,24}, planted P = 4 scores highest", 600, granularity_sweep);
  criterion("Determinism: identical seeded preprocess + 3-epoch train give identical checkpoints", 120, determinism);
  criterion("Ablation plumbing: each flag changes exactly the intended structure", 5, ablation_plumbing);
  nyc_best_effort();
  std::cout << (failures == 0 ? "ALL PRIMARY CRITERIA PASSED" : std::to_string(failures) + " CRITERIA FAILED")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
