#pragma once

#include <cstdint>
#include <vector>

#include "mtnet/autodiff.hpp"
#include "mtnet/model.hpp"

// Self-contained correctness probes shared by the CLI and the acceptance run.
namespace mtnet::model {

// Five check-ins over two days (Aug 1 08:00, 13:00, 14:00; Aug 2 09:00,
// 10:00 UTC, 2012) on a vocabulary of 3 users, 6 POIs, 3 categories and 2
// geo clusters, with the label at Aug 2 11:00.
struct GradCheckFixture {
  VocabSizes vocab{3, 6, 3, 2};
  std::vector<CheckIn> prefix;
  CheckIn label;
};
GradCheckFixture grad_check_fixture();

// Small dimensions with dropout off, suited to finite differences.
ModelConfig grad_check_config();

// Finite-difference check of every parameter of a freshly initialised model
// (zero-initialised tensors are perturbed so every path carries gradient).
ad::GradCheckReport full_model_grad_check(const ModelConfig& config, std::uint64_t seed,
                                          const ad::GradCheckOptions& opts = {});

}  // namespace mtnet::model
