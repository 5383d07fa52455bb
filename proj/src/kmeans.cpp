#include <algorithm>
#include <limits>
#include <random>
#include <set>

#include "mtnet/errors.hpp"
#include "mtnet/ingest.hpp"
#include "mtnet/kernels.hpp"

namespace mtnet::ingest {

namespace {

double sq_dist(const std::array<double, 2>& a, const double* c) {
  const double dx = a[0] - c[0];
  const double dy = a[1] - c[1];
  return dx * dx + dy * dy;
}

}  // namespace

KMeansResult kmeans_geo(const std::vector<std::array<double, 2>>& points, std::size_t k,
                        std::size_t max_iters, std::uint64_t seed) {
  if (k == 0) throw ConfigError("dataset.geo_clusters", "k must be at least 1");
  const std::set<std::array<double, 2>> distinct(points.begin(), points.end());
  if (k > distinct.size())
    throw ConfigError("dataset.geo_clusters", "k = " + std::to_string(k) + " exceeds the " +
                                                  std::to_string(distinct.size()) +
                                                  " distinct coordinates");
  const std::size_t n = points.size();
  std::vector<double> flat(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    flat[2 * i] = points[i][0];
    flat[2 * i + 1] = points[i][1];
  }

  // k-means++ seeding: first centre uniform, then proportional to D^2.
  std::mt19937_64 rng(seed);
  std::vector<double> cent;
  cent.reserve(2 * k);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t first = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  cent.insert(cent.end(), {points[first][0], points[first][1]});
  while (cent.size() < 2 * k) {
    const double* last = cent.data() + cent.size() - 2;
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], sq_dist(points[i], last));
      total += d2[i];
    }
    // total > 0 because fewer than k centres cannot cover k distinct points.
    double r = std::uniform_real_distribution<double>(0.0, total)(rng);
    std::size_t pick = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (d2[i] <= 0) continue;
      pick = i;
      r -= d2[i];
      if (r < 0) break;
    }
    cent.insert(cent.end(), {points[pick][0], points[pick][1]});
  }

  KMeansResult res;
  res.assignment.assign(n, std::numeric_limits<std::size_t>::max());
  std::vector<std::size_t> next(n);
  bool converged = false;
  for (std::size_t it = 0; it < max_iters; ++it) {
    const double inertia = kernels::assign_nearest_parallel(flat, cent, next);
    res.inertia_history.push_back(inertia);
    res.iterations = it + 1;
    const bool stable = next == res.assignment;
    res.assignment = next;
    if (stable) {
      converged = true;
      break;
    }

    std::vector<double> sum(2 * k, 0.0);
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      sum[2 * next[i]] += points[i][0];
      sum[2 * next[i] + 1] += points[i][1];
      ++count[next[i]];
    }
    std::vector<bool> taken(n, false);
    for (std::size_t c = 0; c < k; ++c) {
      if (count[c] > 0) {
        cent[2 * c] = sum[2 * c] / static_cast<double>(count[c]);
        cent[2 * c + 1] = sum[2 * c + 1] / static_cast<double>(count[c]);
      }
    }
    // Re-seed empty clusters to the points farthest from their centroids.
    for (std::size_t c = 0; c < k; ++c) {
      if (count[c] > 0) continue;
      std::size_t far = n;
      double best = -1;
      for (std::size_t i = 0; i < n; ++i) {
        if (taken[i]) continue;
        const double d = sq_dist(points[i], &cent[2 * next[i]]);
        if (d > best) {
          best = d;
          far = i;
        }
      }
      taken[far] = true;
      cent[2 * c] = points[far][0];
      cent[2 * c + 1] = points[far][1];
      ++res.reseeds;
    }
  }
  if (!converged) {
    // Out of iterations: make the assignment consistent with the returned centroids.
    res.inertia_history.push_back(kernels::assign_nearest_parallel(flat, cent, res.assignment));
  }
  res.centroids.resize(k);
  for (std::size_t c = 0; c < k; ++c) res.centroids[c] = {cent[2 * c], cent[2 * c + 1]};
  return res;
}

}  // namespace mtnet::ingest
