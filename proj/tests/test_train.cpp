#include <doctest.h>

#include <omp.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "mtnet/checkpoint.hpp"
#include "mtnet/dataset.hpp"
#include "mtnet/errors.hpp"
#include "mtnet/eval.hpp"
#include "mtnet/hash.hpp"
#include "mtnet/optim.hpp"
#include "mtnet/synth.hpp"
#include "mtnet/train.hpp"
#include "test_util.hpp"

using namespace mtnet;
using namespace mtnet::train;

namespace {

model::ModelConfig toy_config() {
  model::ModelConfig c;
  c.d_user = c.d_poi = c.d_cat = c.d_geo = 4;
  c.hidden = 8;
  c.ff_dim = 16;
  c.layers = 1;
  c.heads = 2;
  c.slots_per_day = 4;
  c.dropout_embed = 0.0;
  c.dropout_param = 0.0;
  return c;
}

ingest::Bundle synth_bundle(std::size_t users = 6, std::size_t days = 8) {
  synth::SynthOptions so;
  so.users = users;
  so.days = days;
  std::stringstream csv;
  synth::write_csv(synth::generate(so), csv);
  ingest::PreprocessOptions po;
  po.format.has_header = true;
  po.format.time_format = TimeFormat::Epoch;
  po.min_user_checkins = 2;
  po.min_poi_visits = 1;
  po.geo_clusters = 3;
  return ingest::preprocess(csv, po, "h", "{}");
}

model::VocabSizes sizes_of(const ingest::Bundle& b) {
  return {b.vocab.users.size(), b.vocab.pois.size(), b.vocab.categories.size(),
          b.vocab.num_geo_clusters};
}

std::unique_ptr<model::MTNet> toy_net(const ingest::Bundle& b, std::uint64_t seed = 7,
                                      model::ModelConfig cfg = toy_config()) {
  return std::make_unique<model::MTNet>(cfg, sizes_of(b), b.max_leaves_per_period, seed);
}

std::vector<Real> flat_params(const model::MTNet& net) {
  std::vector<Real> out;
  const auto& p = const_cast<model::MTNet&>(net).params();
  for (ad::ParamId i = 0; i < p.size(); ++i)
    out.insert(out.end(), p[i].data().begin(), p[i].data().end());
  return out;
}

std::string temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("mtnet_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

}  // namespace

// ---- optimizer ---------------------------------------------------------------

TEST_CASE("Adam first step moves each coordinate by lr against the gradient sign") {
  ad::ParamStore ps;
  const auto id = ps.add("w", ad::Tensor(1, 3, std::vector<Real>{0, 1, -2}));
  ad::GradBuffers g(ps);
  g[id][0] = 0.5;
  g[id][1] = -3.0;
  g[id][2] = 1e-3;
  auto st = OptimizerState::for_params(ps);
  adam_step(ps, g, st, 1e-3, AdamOptions{0.9, 0.999, 1e-8, 0.0});
  CHECK(st.step == 1);
  CHECK(ps[id][0] == doctest::Approx(-1e-3).epsilon(1e-5));
  CHECK(ps[id][1] == doctest::Approx(1 + 1e-3).epsilon(1e-6));
  CHECK(ps[id][2] == doctest::Approx(-2 - 1e-3).epsilon(1e-4));
}

TEST_CASE("Adam with zero gradient and zero weight decay leaves parameters unchanged") {
  ad::ParamStore ps;
  const auto id = ps.add("w", ad::Tensor(2, 2, std::vector<Real>{0.3, -0.1, 2, 5}));
  const auto before = std::vector<Real>(ps[id].data().begin(), ps[id].data().end());
  ad::GradBuffers g(ps);
  auto st = OptimizerState::for_params(ps);
  for (int i = 0; i < 3; ++i) adam_step(ps, g, st, 1e-2, AdamOptions{0.9, 0.999, 1e-8, 0.0});
  CHECK(std::vector<Real>(ps[id].data().begin(), ps[id].data().end()) == before);
}

TEST_CASE("Adam weight decay acts through the gradient") {
  ad::ParamStore ps;
  const auto id = ps.add("w", ad::Tensor(1, 1, std::vector<Real>{2.0}));
  ad::GradBuffers g(ps);
  auto st = OptimizerState::for_params(ps);
  adam_step(ps, g, st, 1e-3, AdamOptions{0.9, 0.999, 1e-8, 1e-4});
  CHECK(ps[id][0] == doctest::Approx(2.0 - 1e-3).epsilon(1e-6));
}

TEST_CASE("non-finite gradient raises NumericError naming the parameter and updates nothing") {
  ad::ParamStore ps;
  const auto a = ps.add("emb.user", ad::Tensor(1, 2, 1.0));
  const auto b = ps.add("head.day.W", ad::Tensor(1, 2, 1.0));
  ad::GradBuffers g(ps);
  g[a][0] = 0.5;
  g[b][1] = std::numeric_limits<Real>::quiet_NaN();
  auto st = OptimizerState::for_params(ps);
  try {
    adam_step(ps, g, st, 1e-3);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("head.day.W") != std::string::npos);
  }
  CHECK(ps[a][0] == 1.0);
  CHECK(st.step == 0);
  g[b][1] = std::numeric_limits<Real>::infinity();
  CHECK_THROWS_AS(adam_step(ps, g, st, 1e-3), NumericError);
}

TEST_CASE("step learning-rate schedule") {
  CHECK(lr_at(0) == doctest::Approx(1e-3));
  CHECK(lr_at(5) == doctest::Approx(1e-3));
  CHECK(lr_at(6) == doctest::Approx(9e-4));
  CHECK(lr_at(13) == doctest::Approx(1e-3 * 0.81));
  CHECK(lr_at(3, 0.1, 1, 0.5) == doctest::Approx(0.0125));
}

TEST_CASE("global norm clipping") {
  ad::ParamStore ps;
  const auto a = ps.add("a", ad::Tensor(1, 2));
  const auto b = ps.add("b", ad::Tensor(1, 1));
  ad::GradBuffers g(ps);
  g[a][0] = 3;
  g[a][1] = 0;
  g[b][0] = 4;
  CHECK(global_norm(g) == doctest::Approx(5));
  CHECK(clip_global_norm(g, 10) == doctest::Approx(5));
  CHECK(g[a][0] == 3);
  CHECK(clip_global_norm(g, 1) == doctest::Approx(5));
  CHECK(global_norm(g) == doctest::Approx(1));
  CHECK(g[b][0] == doctest::Approx(0.8));
}

// ---- metrics -----------------------------------------------------------------

TEST_CASE("rank with ties broken by ascending POI id") {
  const std::vector<Real> s{0.5, 0.9, 0.5, 0.1, 0.5};
  CHECK(eval::rank_of(s, 1) == 1);
  CHECK(eval::rank_of(s, 0) == 2);
  CHECK(eval::rank_of(s, 2) == 3);
  CHECK(eval::rank_of(s, 4) == 4);
  CHECK(eval::rank_of(s, 3) == 5);
  CHECK_THROWS(eval::rank_of(s, 5));
}

TEST_CASE("Acc@k and MRR oracles") {
  // Ranks 1 and 4: MRR = (1 + 1/4) / 2.
  const std::vector<std::vector<Real>> scores{{0.9, 0.1, 0.0, 0.2}, {0.4, 0.3, 0.2, 0.1}};
  const std::vector<std::size_t> truth{0, 3};
  CHECK(eval::mrr(scores, truth) == doctest::Approx(0.625));
  CHECK(eval::acc_at_k(scores, truth, 1) == doctest::Approx(0.5));
  CHECK(eval::acc_at_k(scores, truth, 3) == doctest::Approx(0.5));
  CHECK(eval::acc_at_k(scores, truth, 4) == doctest::Approx(1.0));
  // Uniform scores: rank = truth + 1.
  const std::vector<std::vector<Real>> flat(3, std::vector<Real>(5, 0.0));
  const std::vector<std::size_t> t2{0, 2, 4};
  CHECK(eval::mrr(flat, t2) == doctest::Approx((1.0 + 1.0 / 3 + 1.0 / 5) / 3));
  CHECK(eval::acc_at_k(flat, t2, 1) == doctest::Approx(1.0 / 3));
}

TEST_CASE("metrics match a sort-and-scan oracle on a random 50-sample fixture") {
  ad::Rng rng(2024);
  const std::size_t n = 50, pois = 17;
  const auto scores = test::random_scores(n, pois, rng);
  std::vector<std::size_t> truth(n);
  std::uniform_int_distribution<std::size_t> pick(0, pois - 1);
  for (auto& t : truth) t = pick(rng);
  double rr = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = test::oracle_rank(scores[i], truth[i]);
    CHECK(eval::rank_of(scores[i], truth[i]) == r);
    rr += 1.0 / static_cast<double>(r);
  }
  for (std::size_t k : {1, 3, 5, 10, 17}) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) hits += test::oracle_rank(scores[i], truth[i]) <= k;
    CHECK(eval::acc_at_k(scores, truth, k) == static_cast<double>(hits) / n);
  }
  CHECK(std::abs(eval::mrr(scores, truth) - rr / n) < 1e-12);
}

TEST_CASE("report from ranks with per-slot breakdown") {
  const std::vector<std::size_t> ranks{1, 2, 10, 1};
  const std::vector<int> slots{0, 0, 3, 3};
  const auto r = eval::report_from_ranks(ranks, slots, {5, 1});
  CHECK(r.ks == std::vector<std::size_t>{1, 5});
  CHECK(r.samples == 4);
  CHECK(r.acc_at(1) == doctest::Approx(0.5));
  CHECK(r.acc_at(5) == doctest::Approx(0.75));
  CHECK(r.acc_at(10) == 0);
  CHECK(r.mrr == doctest::Approx((1 + 0.5 + 0.1 + 1) / 4));
  REQUIRE(r.per_slot.size() == 2);
  CHECK(r.per_slot.at(0).acc1 == doctest::Approx(0.5));
  CHECK(r.per_slot.at(3).mrr == doctest::Approx(0.55));
  const auto j = r.to_json();
  CHECK(j.contains("mrr"));
  const auto empty = eval::report_from_ranks({}, {});
  CHECK(empty.samples == 0);
  CHECK(empty.mrr == 0);
}

// ---- config ------------------------------------------------------------------

TEST_CASE("train config JSON round trip and strict keys") {
  TrainConfig c;
  c.lr = 0.01;
  c.batch_size = 7;
  c.clip_norm = 0;
  CHECK(train_config_from_json(to_json(c)) == c);
  CHECK(train_config_from_json(nlohmann::json::object()) == TrainConfig{});
  try {
    train_config_from_json({{"lrr", 1}});
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.key_path() == "train.lrr");
  }
  CHECK_THROWS_AS(train_config_from_json({{"batch_size", 0}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json({{"lr", -1}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json({{"epochs", "3"}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json({{"shards", -2}}), ConfigError);
}

TEST_CASE("select_best picks the earliest maximum") {
  const std::vector<double> v{0.1, 0.3, 0.3, 0.2};
  CHECK(select_best(v) == 1);
  const std::vector<double> one{0.0};
  CHECK(select_best(one) == 0);
  CHECK_THROWS_AS(select_best(std::span<const double>{}), Error);
}

// ---- training ----------------------------------------------------------------

TEST_CASE("batch count is ceil(samples / batch size)") {
  // 2050 two-check-in trajectories give 2050 single-step samples.
  std::vector<Trajectory> trajs;
  for (std::size_t i = 0; i < 2050; ++i) {
    Trajectory t;
    t.user_id = i % 3;
    const std::int64_t t0 = 1343779200 + static_cast<std::int64_t>(i) * 7200;
    for (int k = 0; k < 2; ++k) {
      CheckIn c;
      c.user_id = t.user_id;
      c.poi_id = (i + k) % 5;
      c.category_id = c.poi_id % 2;
      c.geo_cluster_id = c.poi_id % 2;
      c.timestamp = t0 + k * 600;
      t.checkins.push_back(c);
    }
    trajs.push_back(t);
  }
  auto cfg = toy_config();
  cfg.hidden = 4;
  cfg.ff_dim = 4;
  model::MTNet net(cfg, {3, 5, 2, 2}, 1, 3);
  const auto samples = prepare_samples(cfg, trajs, false);
  REQUIRE(samples.size() == 2050);
  TrainConfig tc;
  tc.batch_size = 1024;
  auto opt = OptimizerState::for_params(net.params());
  const auto m = train_epoch(net, samples, opt, tc, 0, 1);
  CHECK(m.batches == 3);
  CHECK(opt.step == 3);
  CHECK(m.samples == 2050);
  CHECK(std::isfinite(m.loss));
}

TEST_CASE("training loss decreases on a small synthetic set") {
  const auto b = synth_bundle(2, 3);
  auto net = toy_net(b);
  auto samples = prepare_samples(net->config(), b.split.train, false);
  samples.resize(std::min<std::size_t>(samples.size(), 10));
  REQUIRE(samples.size() == 10);
  TrainConfig tc;
  tc.lr = 1e-2;
  tc.batch_size = 16;
  auto opt = OptimizerState::for_params(net->params());
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t e = 0; e < 5; ++e) {
    const auto m = train_epoch(*net, samples, opt, tc, e, 11);
    CHECK(m.loss < prev);
    prev = m.loss;
  }
}

TEST_CASE("training is bit-identical across thread counts") {
  const auto b = synth_bundle(4, 4);
  auto cfg = toy_config();
  cfg.dropout_embed = 0.3;
  cfg.dropout_param = 0.2;
  TrainConfig tc;
  tc.batch_size = 8;
  tc.shards = 3;
  const int saved = omp_get_max_threads();
  std::vector<std::vector<Real>> results;
  std::vector<double> losses;
  for (int threads : {1, 4}) {
    omp_set_num_threads(threads);
    auto net = toy_net(b, 5, cfg);
    const auto samples = prepare_samples(cfg, b.split.train, false);
    auto opt = OptimizerState::for_params(net->params());
    double loss = 0;
    for (std::size_t e = 0; e < 2; ++e) loss = train_epoch(*net, samples, opt, tc, e, 99).loss;
    results.push_back(flat_params(*net));
    losses.push_back(loss);
  }
  omp_set_num_threads(saved);
  CHECK(results[0] == results[1]);
  CHECK(losses[0] == losses[1]);
}

TEST_CASE("different seeds give different training trajectories") {
  const auto b = synth_bundle(3, 3);
  auto cfg = toy_config();
  cfg.dropout_embed = 0.3;
  TrainConfig tc;
  tc.batch_size = 4;
  std::vector<std::vector<Real>> out;
  for (std::uint64_t seed : {1, 2}) {
    auto net = toy_net(b, 5, cfg);
    const auto samples = prepare_samples(cfg, b.split.train, false);
    auto opt = OptimizerState::for_params(net->params());
    train_epoch(*net, samples, opt, tc, 0, seed);
    out.push_back(flat_params(*net));
  }
  CHECK(out[0] != out[1]);
}

// ---- evaluation --------------------------------------------------------------

TEST_CASE("evaluation does not mutate parameters and is thread-count independent") {
  const auto b = synth_bundle(4, 4);
  auto cfg = toy_config();
  cfg.dropout_embed = 0.5;  // must be ignored at evaluation time
  const auto net = toy_net(b, 9, cfg);
  const auto before = flat_params(*net);
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const auto r1 = eval::evaluate(*net, b.split.test);
  omp_set_num_threads(4);
  const auto r4 = eval::evaluate(*net, b.split.test);
  omp_set_num_threads(saved);
  CHECK(r1 == r4);
  CHECK(flat_params(*net) == before);
  std::size_t expected = 0;
  for (const auto& t : b.split.test) expected += t.checkins.size() - 1;
  CHECK(r1.samples == expected);
  eval::EvalOptions last;
  last.last_prefix_only = true;
  CHECK(eval::evaluate(*net, b.split.test, last).samples == b.split.test.size());
  CHECK(r1.acc_at(1) <= r1.acc_at(5));
  CHECK(r1.acc_at(5) <= r1.acc_at(10));
}

TEST_CASE("untrained model scores at chance on labels independent of the input") {
  // 1200 two-check-in samples whose labels are uniform over 40 POIs, so any
  // model hits the top k with probability k / 40.
  const std::size_t n = 1200, pois = 40;
  ad::Rng rng(31);
  std::uniform_int_distribution<std::uint32_t> poi(0, pois - 1);
  std::uniform_int_distribution<std::int64_t> when(0, 86400 * 30);
  std::vector<Trajectory> samples(n);
  for (auto& s : samples) {
    const std::int64_t t0 = 1333324800 + when(rng);
    for (int k = 0; k < 2; ++k) {
      CheckIn c;
      c.user_id = poi(rng) % 4;
      c.poi_id = poi(rng);
      c.category_id = c.poi_id % 5;
      c.geo_cluster_id = c.poi_id % 3;
      c.timestamp = t0 + k * 900;
      s.checkins.push_back(c);
    }
    s.user_id = s.checkins[0].user_id;
    CheckIn label = s.checkins[1];
    label.poi_id = poi(rng);
    label.timestamp += 900;
    s.checkins.pop_back();
    s.label = label;
  }
  const model::MTNet net(toy_config(), {4, pois, 5, 3}, 2, 21);
  const auto r = eval::evaluate_samples(net, samples);
  REQUIRE(r.samples == n);
  for (std::size_t k : {1, 5, 10}) {
    const double p = static_cast<double>(k) / pois;
    const double sigma = std::sqrt(p * (1 - p) / n);
    INFO("k=" << k << " acc=" << r.acc_at(k));
    CHECK(std::abs(r.acc_at(k) - p) <= 3 * sigma);
  }
}

TEST_CASE("a model that always ranks the truth first scores 1 on every metric") {
  const std::vector<std::size_t> ranks(25, 1);
  const auto r = eval::report_from_ranks(ranks, {});
  CHECK(r.acc_at(1) == 1.0);
  CHECK(r.acc_at(10) == 1.0);
  CHECK(r.mrr == 1.0);
}

// ---- checkpoints -------------------------------------------------------------

TEST_CASE("checkpoint round trip is bit-exact") {
  const auto b = synth_bundle(3, 4);
  auto cfg = toy_config();
  cfg.root = model::RootMode::SuperRoot;
  auto net = toy_net(b, 13, cfg);
  const auto samples = prepare_samples(cfg, b.split.train, false);
  auto opt = OptimizerState::for_params(net->params());
  TrainConfig tc;
  tc.batch_size = 4;
  train_epoch(*net, samples, opt, tc, 0, 1);

  const auto dir = temp_dir("ckpt");
  model::CheckpointMeta meta{"cfg", b.vocab.hash(), opt.step, 0, {{"note", "x"}}};
  save_checkpoint(dir + "/a.ckpt", *net, meta, &opt);
  save_checkpoint(dir + "/b.ckpt", *net, meta);
  const auto ld = model::load_checkpoint(dir + "/a.ckpt");
  CHECK(ld.meta == meta);
  REQUIRE(ld.optimizer);
  CHECK(*ld.optimizer == opt);
  CHECK(ld.net->config() == net->config());
  CHECK(ld.net->vocab() == net->vocab());
  CHECK(flat_params(*ld.net) == flat_params(*net));
  CHECK_FALSE(model::load_checkpoint(dir + "/b.ckpt").optimizer);
  // Identical predictions after reload.
  CHECK(eval::evaluate(*ld.net, b.split.test) == eval::evaluate(*net, b.split.test));
  // Saving the reloaded model reproduces the same bytes.
  save_checkpoint(dir + "/c.ckpt", *ld.net, ld.meta, &*ld.optimizer);
  CHECK(sha256_file(dir + "/a.ckpt") == sha256_file(dir + "/c.ckpt"));
}

TEST_CASE("checkpoint errors") {
  const auto dir = temp_dir("ckpt_err");
  CHECK_THROWS_AS(model::load_checkpoint(dir + "/missing.ckpt"), IoError);
  {
    std::ofstream(dir + "/junk.ckpt") << "not a checkpoint";
  }
  CHECK_THROWS_AS(model::load_checkpoint(dir + "/junk.ckpt"), DataError);
  const auto b = synth_bundle(2, 3);
  const auto net = toy_net(b);
  save_checkpoint(dir + "/ok.ckpt", *net, {});
  const auto size = std::filesystem::file_size(dir + "/ok.ckpt");
  std::filesystem::resize_file(dir + "/ok.ckpt", size - 3);
  CHECK_THROWS_AS(model::load_checkpoint(dir + "/ok.ckpt"), DataError);
}

TEST_CASE("fit writes checkpoints and one metrics line per epoch") {
  const auto b = synth_bundle(4, 6);
  REQUIRE_FALSE(b.split.valid.empty());
  auto net = toy_net(b);
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 8;
  tc.lr = 5e-3;
  const auto dir = temp_dir("fit");
  FitOptions fo;
  fo.out_dir = dir;
  fo.config_hash = "abc";
  std::size_t calls = 0;
  fo.on_epoch = [&](const EpochMetrics&) { ++calls; };
  const auto res = fit(*net, b, tc, fo, 3);
  CHECK(calls == 3);
  REQUIRE(res.history.size() == 3);
  std::vector<double> acc;
  for (const auto& m : res.history) {
    REQUIRE(m.valid);
    acc.push_back(m.valid->acc_at(1));
  }
  CHECK(res.best_epoch == select_best(acc));
  std::ifstream in(dir + "/metrics.jsonl");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("epoch") == lines);
    CHECK(j.contains("valid"));
    ++lines;
  }
  CHECK(lines == 3);
  const auto last = model::load_checkpoint(dir + "/last.ckpt");
  CHECK(last.meta.epoch == 2);
  CHECK(last.meta.config_hash == "abc");
  CHECK(flat_params(*last.net) == flat_params(*net));
  CHECK(model::load_checkpoint(dir + "/best.ckpt").meta.epoch == res.best_epoch);
}
