#pragma once

#include <algorithm>
#include <numeric>
#include <random>
#include <vector>

#include "mtnet/autodiff.hpp"

namespace test {

// Uniform entries in [offset - amp, offset + amp].
inline mtnet::ad::Tensor random_tensor(std::size_t rows, std::size_t cols, mtnet::ad::Rng& rng,
                                       double amp = 1.0, double offset = 0.0) {
  std::uniform_real_distribution<double> u(-amp, amp);
  mtnet::ad::Tensor t(rows, cols);
  for (auto& v : t.data()) v = static_cast<mtnet::Real>(offset + u(rng));
  return t;
}

// Sort-and-scan ranking, independent of the library's counting rule: a
// stable sort by descending score keeps tied ids in ascending order.
inline std::size_t oracle_rank(const std::vector<mtnet::Real>& scores, std::size_t truth) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return static_cast<std::size_t>(std::find(order.begin(), order.end(), truth) - order.begin()) + 1;
}

// Random score rows over `pois` candidates; a coarse value grid makes ties common.
inline std::vector<std::vector<mtnet::Real>> random_scores(std::size_t rows, std::size_t pois, mtnet::ad::Rng& rng) {
  std::uniform_int_distribution<int> grid(0, 6);
  std::vector<std::vector<mtnet::Real>> out(rows, std::vector<mtnet::Real>(pois));
  for (auto& r : out)
    for (auto& v : r) v = static_cast<mtnet::Real>(grid(rng)) * 0.25;
  return out;
}

}  // namespace test
