#pragma once

#include <cstdint>
#include <istream>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtnet/dataset.hpp"
#include "mtnet/eval.hpp"
#include "mtnet/model.hpp"
#include "mtnet/train.hpp"

namespace mtnet::cli {

struct DatasetConfig {
  std::string input;   // raw check-in file (preprocess)
  std::string bundle;  // preprocessed bundle (train, evaluate, ...)
  ingest::PreprocessOptions preprocess;  // seed and slots_per_day are filled from the app config
};

struct EvalConfig {
  std::string split = "test";
  bool last_prefix_only = false;
  std::vector<std::size_t> ks{1, 5, 10};
};

// The unified run configuration. The model's slots_per_day and timezone
// offset drive preprocessing too, and one seed feeds every random stream.
struct AppConfig {
  std::uint64_t seed = 42;
  DatasetConfig dataset;
  model::ModelConfig model;
  train::TrainConfig train;
  EvalConfig eval;

  // Derived seeds, one per random stream.
  std::uint64_t kmeans_seed() const { return seed; }
  std::uint64_t init_seed() const;
  std::uint64_t train_seed() const;
  std::uint64_t eval_seed() const;
};

nlohmann::json to_json(const AppConfig& c);
// Strict: unknown keys raise ConfigError with the dotted key path.
AppConfig app_config_from_json(const nlohmann::json& j);
AppConfig load_app_config(const std::string& path);  // IoError, ConfigError
// SHA-256 of the canonical JSON with file locations removed, so the same
// settings hash identically wherever the data lives.
std::string config_hash(const AppConfig& c);
// Hash of what determines a bundle: the dataset section, P and the seed.
std::string dataset_hash(const AppConfig& c);

// ---- pipeline steps shared by the subcommands and the acceptance run ------

ingest::Bundle preprocess(const AppConfig& c, std::istream& input);

// Model sized for `bundle`, with the leaf fan-out bound recomputed for the
// configured P. ConfigError when the bundle's timezone disagrees.
std::unique_ptr<model::MTNet> make_model(const AppConfig& c, const ingest::Bundle& bundle);

// DataError naming both hashes when the model was trained on another vocabulary.
void check_vocab(const std::string& checkpoint_vocab_hash, const ingest::Bundle& bundle);

eval::EvalOptions eval_options(const AppConfig& c);

struct SweepRow {
  int slots_per_day = 0;
  std::size_t best_epoch = 0;
  double valid_acc1 = 0;
  eval::EvalReport test;
};

// Trains one model per P on `csv` (preprocessed separately for each P) and
// evaluates the best-by-validation parameters on the test split. Writes one
// sub-directory per P under out_dir when it is non-empty.
std::vector<SweepRow> granularity_sweep(const AppConfig& base, const std::string& csv,
                                        const std::vector<int>& slots, const std::string& out_dir = "");
std::string sweep_table(const std::vector<SweepRow>& rows);  // Markdown

// Entry point. Exit codes: 0 success, 1 runtime/numeric failure, 2 bad
// configuration or usage, 3 I/O failure, 4 invalid data. Failures print a
// single JSON line {"error": kind, "key": path?, "message": text} to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace mtnet::cli
