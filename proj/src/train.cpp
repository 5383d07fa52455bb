#include "mtnet/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "mtnet/checkpoint.hpp"
#include "mtnet/errors.hpp"
#include "mtnet/hash.hpp"
#include "mtnet/ingest.hpp"
#include "mtnet/parallel.hpp"

namespace mtnet::train {

using nlohmann::json;

void TrainConfig::validate() const {
  if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("train.lr", "must be positive");
  if (!(weight_decay >= 0)) throw ConfigError("train.weight_decay", "must be non-negative");
  if (!(lr_gamma > 0 && lr_gamma <= 1)) throw ConfigError("train.lr_gamma", "must lie in (0, 1]");
  if (lr_step == 0) throw ConfigError("train.lr_step", "must be positive");
  if (batch_size == 0) throw ConfigError("train.batch_size", "must be positive");
  if (shards == 0) throw ConfigError("train.shards", "must be positive");
  if (!std::isfinite(clip_norm)) throw ConfigError("train.clip_norm", "must be finite");
}

json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"lr_step", c.lr_step},
          {"lr_gamma", c.lr_gamma},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"shards", c.shards},
          {"clip_norm", c.clip_norm},
          {"last_step_only", c.last_step_only},
          {"validate_each_epoch", c.validate_each_epoch}};
}

TrainConfig train_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("train", "expected an object");
  TrainConfig c;
  for (const auto& [key, v] : j.items()) {
    const std::string path = "train." + key;
    const auto num = [&](double& out) {
      if (!v.is_number()) throw ConfigError(path, "expected a number");
      out = v.get<double>();
    };
    const auto count = [&](std::size_t& out) {
      if (!v.is_number_integer() || v.get<long long>() < 0)
        throw ConfigError(path, "expected a non-negative integer");
      out = v.get<std::size_t>();
    };
    const auto flag = [&](bool& out) {
      if (!v.is_boolean()) throw ConfigError(path, "expected true or false");
      out = v.get<bool>();
    };
    if (key == "lr") num(c.lr);
    else if (key == "weight_decay") num(c.weight_decay);
    else if (key == "lr_step") count(c.lr_step);
    else if (key == "lr_gamma") num(c.lr_gamma);
    else if (key == "epochs") count(c.epochs);
    else if (key == "batch_size") count(c.batch_size);
    else if (key == "shards") count(c.shards);
    else if (key == "clip_norm") num(c.clip_norm);
    else if (key == "last_step_only") flag(c.last_step_only);
    else if (key == "validate_each_epoch") flag(c.validate_each_epoch);
    else throw ConfigError(path, "unknown key");
  }
  c.validate();
  return c;
}

std::vector<TrainSample> prepare_samples(const model::ModelConfig& cfg,
                                         std::span<const Trajectory> trajectories,
                                         bool last_step_only) {
  const auto samples = ingest::make_supervised_samples(
      std::vector<Trajectory>(trajectories.begin(), trajectories.end()), last_step_only);
  std::vector<TrainSample> out(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    out[i].tree = tree::build_mobility_tree(samples[i].checkins, cfg.slots_per_day, cfg.tz_offset_seconds);
    out[i].label = *samples[i].label;
  });
  return out;
}

json EpochMetrics::to_json() const {
  json j = {{"epoch", epoch},         {"lr", lr},
            {"loss", loss},           {"loss_poi", loss_poi},
            {"loss_geo", loss_geo},   {"loss_cat", loss_cat},
            {"grad_norm", grad_norm}, {"batches", batches},
            {"samples", samples},     {"truncated_leaves", truncated_leaves},
            {"seconds", seconds}};
  if (valid) j["valid"] = valid->to_json();
  return j;
}

EpochMetrics train_epoch(model::MTNet& net, std::span<const TrainSample> samples,
                         OptimizerState& opt, const TrainConfig& cfg, std::size_t epoch,
                         std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  EpochMetrics m;
  m.epoch = epoch;
  m.lr = lr_at(epoch, cfg.lr, cfg.lr_step, cfg.lr_gamma);
  m.samples = samples.size();
  if (samples.empty()) return m;

  const std::uint64_t epoch_seed = mix_seed(seed, epoch);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  ad::Rng shuffle_rng(epoch_seed);
  std::shuffle(order.begin(), order.end(), shuffle_rng);

  auto& params = net.params();
  std::vector<ad::GradBuffers> shard_grads(cfg.shards, ad::GradBuffers(params));
  ad::GradBuffers total(params);
  struct ShardSums {
    double loss = 0, poi = 0, geo = 0, cat = 0;
    std::size_t truncated = 0;
  };

  for (std::size_t begin = 0; begin < samples.size(); begin += cfg.batch_size) {
    const std::size_t bs = std::min(cfg.batch_size, samples.size() - begin);
    const std::size_t used = std::min(cfg.shards, bs);
    std::vector<ShardSums> sums(used);
    const Real inv_bs = Real{1} / static_cast<Real>(bs);
    parallel_for(used, [&](std::size_t k) {
      auto& grads = shard_grads[k];
      grads.zero();
      const std::size_t lo = begin + k * bs / used;
      const std::size_t hi = begin + (k + 1) * bs / used;
      for (std::size_t j = lo; j < hi; ++j) {
        const std::size_t idx = order[j];
        ad::Rng rng(mix_seed(epoch_seed, idx));
        ad::Tape tape;
        model::Pass pass(net, tape, &grads);
        pass.train = true;
        pass.rng = &rng;
        const auto fr = net.forward(pass, samples[idx].tree);
        model::LossParts parts;
        const auto loss = net.loss(pass, fr.pred, samples[idx].label, &parts);
        tape.backward(ad::scale(loss, inv_bs));
        sums[k].loss += parts.total;
        sums[k].poi += parts.poi;
        sums[k].geo += parts.geo;
        sums[k].cat += parts.cat;
        sums[k].truncated += fr.truncated_leaves;
      }
    });
    total.zero();
    for (std::size_t k = 0; k < used; ++k) {
      total.add(shard_grads[k]);
      m.loss += sums[k].loss;
      m.loss_poi += sums[k].poi;
      m.loss_geo += sums[k].geo;
      m.loss_cat += sums[k].cat;
      m.truncated_leaves += sums[k].truncated;
    }
    m.grad_norm += cfg.clip_norm > 0 ? clip_global_norm(total, cfg.clip_norm) : global_norm(total);
    adam_step(params, total, opt, m.lr, AdamOptions{0.9, 0.999, 1e-8, cfg.weight_decay});
    ++m.batches;
  }
  const double n = static_cast<double>(samples.size());
  m.loss /= n;
  m.loss_poi /= n;
  m.loss_geo /= n;
  m.loss_cat /= n;
  m.grad_norm /= static_cast<double>(m.batches);
  m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return m;
}

std::size_t select_best(std::span<const double> acc1) {
  if (acc1.empty()) throw Error("select_best: no evaluated checkpoints");
  std::size_t best = 0;
  for (std::size_t i = 1; i < acc1.size(); ++i)
    if (acc1[i] > acc1[best]) best = i;
  return best;
}

std::vector<std::vector<Real>> snapshot_params(const ad::ParamStore& params) {
  std::vector<std::vector<Real>> out(params.size());
  for (ad::ParamId i = 0; i < params.size(); ++i)
    out[i].assign(params[i].data().begin(), params[i].data().end());
  return out;
}

void restore_params(ad::ParamStore& params, const std::vector<std::vector<Real>>& values) {
  if (values.size() != params.size()) throw Error("restore_params: parameter count mismatch");
  for (ad::ParamId i = 0; i < params.size(); ++i) {
    if (values[i].size() != params[i].size())
      throw Error("restore_params: size mismatch for " + params.name(i));
    std::copy(values[i].begin(), values[i].end(), params[i].data().begin());
  }
}

FitResult fit(model::MTNet& net, const ingest::Bundle& bundle, const TrainConfig& cfg,
              const FitOptions& opts, std::uint64_t seed) {
  cfg.validate();
  const auto samples = prepare_samples(net.config(), bundle.split.train, cfg.last_step_only);
  const auto valid = ingest::make_supervised_samples(bundle.split.valid, cfg.last_step_only);
  const bool validate = cfg.validate_each_epoch && !valid.empty();

  FitResult res;
  res.optimizer = OptimizerState::for_params(net.params());
  std::ofstream metrics;
  if (!opts.out_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(opts.out_dir, ec);
    if (ec) throw IoError("cannot create " + opts.out_dir + ": " + ec.message());
    metrics.open(opts.out_dir + "/metrics.jsonl", std::ios::trunc);
    if (!metrics) throw IoError("cannot write " + opts.out_dir + "/metrics.jsonl");
  }
  model::CheckpointMeta meta;
  meta.config_hash = opts.config_hash;
  meta.vocab_hash = bundle.vocab.hash();
  meta.extra = {{"config", opts.effective_config}};

  std::vector<double> acc1;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto m = train_epoch(net, samples, res.optimizer, cfg, epoch, seed);
    if (validate) {
      m.valid = eval::evaluate_samples(net, valid);
      acc1.push_back(m.valid->acc_at(1));
    }
    const bool improved = !validate || select_best(acc1) == acc1.size() - 1;
    if (improved) {
      res.best_epoch = epoch;
      res.best_params = snapshot_params(net.params());
    }
    if (!opts.out_dir.empty()) {
      meta.step = res.optimizer.step;
      meta.epoch = epoch;
      save_checkpoint(opts.out_dir + "/last.ckpt", net, meta, &res.optimizer);
      if (improved) save_checkpoint(opts.out_dir + "/best.ckpt", net, meta, &res.optimizer);
      metrics << m.to_json().dump() << '\n';
      metrics.flush();
    }
    if (opts.on_epoch) opts.on_epoch(m);
    res.history.push_back(std::move(m));
  }
  return res;
}

}  // namespace mtnet::train
