#include "mtnet/kernels.hpp"

#include <algorithm>
#include <limits>
#include <vector>

#include <omp.h>

namespace mtnet::kernels {

namespace {

constexpr std::size_t kParallelWork = std::size_t{1} << 16;

// One output row of op(A) * op(B). Shared by both gemm variants so that the
// per-element summation order is identical.
inline void gemm_row(Trans ta, Trans tb, std::size_t i, std::size_t m, std::size_t n,
                     std::size_t k, const Real* a, const Real* b, Real* c, bool accumulate) {
  Real* crow = c + i * n;
  if (!accumulate) std::fill(crow, crow + n, Real{0});
  for (std::size_t p = 0; p < k; ++p) {
    const Real aip = ta == Trans::No ? a[i * k + p] : a[p * m + i];
    if (aip == Real{0}) continue;
    if (tb == Trans::No) {
      const Real* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    } else {
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * b[j * k + p];
    }
  }
}

inline double sq_dist(const double* p, const double* q) {
  const double dx = p[0] - q[0];
  const double dy = p[1] - q[1];
  return dx * dx + dy * dy;
}

inline std::size_t nearest(const double* p, std::span<const double> centroids, double* best_d) {
  const std::size_t k = centroids.size() / 2;
  std::size_t best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < k; ++c) {
    const double d = sq_dist(p, centroids.data() + 2 * c);
    if (d < bd) {
      bd = d;
      best = c;
    }
  }
  *best_d = bd;
  return best;
}

}  // namespace

void gemm_serial(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
                 const Real* a, const Real* b, Real* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) gemm_row(ta, tb, i, m, n, k, a, b, c, accumulate);
}

void gemm_parallel(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
                   const Real* a, const Real* b, Real* c, bool accumulate) {
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    gemm_row(ta, tb, static_cast<std::size_t>(i), m, n, k, a, b, c, accumulate);
  }
}

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const Real* a,
          const Real* b, Real* c, bool accumulate) {
  if (m > 1 && m * n * k >= kParallelWork && omp_get_max_threads() > 1 && !omp_in_parallel()) {
    gemm_parallel(ta, tb, m, n, k, a, b, c, accumulate);
  } else {
    gemm_serial(ta, tb, m, n, k, a, b, c, accumulate);
  }
}

double assign_nearest_serial(std::span<const double> points, std::span<const double> centroids,
                             std::span<std::size_t> assignment) {
  double inertia = 0.0;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    double d = 0.0;
    assignment[i] = nearest(points.data() + 2 * i, centroids, &d);
    inertia += d;
  }
  return inertia;
}

double assign_nearest_parallel(std::span<const double> points, std::span<const double> centroids,
                               std::span<std::size_t> assignment) {
  const auto n = static_cast<std::ptrdiff_t>(assignment.size());
  std::vector<double> dist(assignment.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    assignment[i] = nearest(points.data() + 2 * i, centroids, &dist[i]);
  }
  // Serial sum keeps the inertia bit-identical to the reference.
  double inertia = 0.0;
  for (double d : dist) inertia += d;
  return inertia;
}

void set_num_threads(int threads) {
  if (threads > 0) omp_set_num_threads(threads);
}

int max_threads() { return omp_get_max_threads(); }

}  // namespace mtnet::kernels
