#pragma once

#include <cstddef>
#include <span>

#include "mtnet/real.hpp"

// Dense numeric kernels. Every kernel has a plain serial reference and an
// OpenMP version; both compute each output element with the same summation
// order, so their results are bit-identical and the serial form doubles as
// the test oracle.
namespace mtnet::kernels {

enum class Trans { No, Yes };

// C(m x n) = op(A)(m x k) * op(B)(k x n), or C += ... when `accumulate`.
// op(A) is A when Trans::No (A stored m x k) and A^T when Trans::Yes
// (A stored k x m); likewise for B.
void gemm_serial(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
                 const Real* a, const Real* b, Real* c, bool accumulate);
void gemm_parallel(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
                   const Real* a, const Real* b, Real* c, bool accumulate);

// Dispatches to the parallel kernel for large products when more than one
// thread is available and we are not already inside a parallel region.
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
          const Real* a, const Real* b, Real* c, bool accumulate);

// Nearest-centroid assignment over 2-D points (lat, lon pairs, row-major).
// Ties go to the lowest centroid index. Returns the summed squared distance.
double assign_nearest_serial(std::span<const double> points, std::span<const double> centroids,
                             std::span<std::size_t> assignment);
double assign_nearest_parallel(std::span<const double> points, std::span<const double> centroids,
                               std::span<std::size_t> assignment);

// Worker count for the OpenMP kernels (wraps omp_set_num_threads).
void set_num_threads(int threads);
int max_threads();

}  // namespace mtnet::kernels
