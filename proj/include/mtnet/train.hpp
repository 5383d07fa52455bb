#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtnet/dataset.hpp"
#include "mtnet/eval.hpp"
#include "mtnet/model.hpp"
#include "mtnet/optim.hpp"
#include "mtnet/tree.hpp"

namespace mtnet::train {

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 1e-4;
  std::size_t lr_step = 6;
  double lr_gamma = 0.9;
  std::size_t epochs = 50;
  std::size_t batch_size = 1024;
  // Each batch is cut into this many contiguous shards whose gradients are
  // summed in shard order; fixing it (rather than the thread count) keeps
  // results identical for any number of threads.
  std::size_t shards = 8;
  double clip_norm = 5.0;  // <= 0 disables clipping
  bool last_step_only = false;
  bool validate_each_epoch = true;

  void validate() const;  // ConfigError naming the "train.*" key
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

// A supervised sample with its tree built once up front.
struct TrainSample {
  tree::MobilityTree tree;
  CheckIn label;
};

std::vector<TrainSample> prepare_samples(const model::ModelConfig& cfg,
                                         std::span<const Trajectory> trajectories,
                                         bool last_step_only);

struct EpochMetrics {
  std::size_t epoch = 0;
  double lr = 0;
  double loss = 0;  // mean L_final over samples
  double loss_poi = 0, loss_geo = 0, loss_cat = 0;
  double grad_norm = 0;  // mean pre-clipping global norm over batches
  std::size_t batches = 0;
  std::size_t samples = 0;
  std::size_t truncated_leaves = 0;
  double seconds = 0;
  std::optional<eval::EvalReport> valid;

  nlohmann::json to_json() const;
};

// One pass over `samples` in an order shuffled from (seed, epoch).
EpochMetrics train_epoch(model::MTNet& net, std::span<const TrainSample> samples,
                         OptimizerState& opt, const TrainConfig& cfg, std::size_t epoch,
                         std::uint64_t seed);

// Index of the largest value; ties go to the earliest. Throws Error when empty.
std::size_t select_best(std::span<const double> validation_acc1);

struct FitOptions {
  std::string out_dir;  // empty: no files written
  std::string config_hash;
  nlohmann::json effective_config = nlohmann::json::object();
  std::function<void(const EpochMetrics&)> on_epoch;
};

struct FitResult {
  std::vector<EpochMetrics> history;
  std::size_t best_epoch = 0;
  OptimizerState optimizer;
  // Parameter values at best_epoch, in ParamStore order.
  std::vector<std::vector<Real>> best_params;
};

std::vector<std::vector<Real>> snapshot_params(const ad::ParamStore& params);
void restore_params(ad::ParamStore& params, const std::vector<std::vector<Real>>& values);

// Trains for cfg.epochs. With an output directory, writes last.ckpt every
// epoch, best.ckpt whenever validation Acc@1 strictly improves (or every
// epoch without a validation split) and one metrics.jsonl line per epoch.
FitResult fit(model::MTNet& net, const ingest::Bundle& bundle, const TrainConfig& cfg,
              const FitOptions& opts, std::uint64_t seed);

}  // namespace mtnet::train
