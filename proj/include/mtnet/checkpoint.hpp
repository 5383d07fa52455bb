#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "mtnet/model.hpp"
#include "mtnet/optim.hpp"

// Binary named-tensor container:
//   "MTNETCK1" | u64 header length | JSON header | parameter data | [Adam m | Adam v]
// The header lists the model config, vocabulary sizes, provenance hashes,
// step/epoch counters and every tensor's name and shape in storage order.
// Values are raw native-endian floats of the build's Real width.
namespace mtnet::model {

struct CheckpointMeta {
  std::string config_hash;  // hash of the effective run config
  std::string vocab_hash;   // hash of the bundle vocabulary the model was trained on
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  nlohmann::json extra = nlohmann::json::object();

  friend bool operator==(const CheckpointMeta&, const CheckpointMeta&) = default;
};

// Written to a temporary file and renamed into place.
void save_checkpoint(const std::string& path, const MTNet& net, const CheckpointMeta& meta,
                     const train::OptimizerState* optimizer = nullptr);

struct LoadedCheckpoint {
  std::unique_ptr<MTNet> net;
  CheckpointMeta meta;
  std::optional<train::OptimizerState> optimizer;
};

// IoError when unreadable, DataError when malformed or built with a
// different float width.
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace mtnet::model
