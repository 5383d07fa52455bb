// Serial vs OpenMP kernels and the sharded batch-gradient step.

#include <benchmark/benchmark.h>

#include <random>
#include <sstream>
#include <vector>

#include "mtnet/cli.hpp"
#include "mtnet/kernels.hpp"
#include "mtnet/synth.hpp"
#include "mtnet/train.hpp"

using namespace mtnet;

namespace {

std::vector<Real> random_vec(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<Real> v(n);
  for (auto& x : v) x = static_cast<Real>(u(rng));
  return v;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vec(n * n, 1), b = random_vec(n * n, 2);
  std::vector<Real> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::gemm_parallel(kernels::Trans::No, kernels::Trans::No, n, n, n, a.data(), b.data(), c.data(), false);
    else
      kernels::gemm_serial(kernels::Trans::No, kernels::Trans::No, n, n, n, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 2 * n * n * n));
}
BENCHMARK(BM_Gemm<false>)->Name("gemm/serial")->Arg(64)->Arg(256)->Arg(512);
BENCHMARK(BM_Gemm<true>)->Name("gemm/parallel")->Arg(64)->Arg(256)->Arg(512);

template <bool Parallel>
void BM_Assign(benchmark::State& state) {
  const auto points = static_cast<std::size_t>(state.range(0));
  std::vector<double> pts(points * 2), cents(60 * 2);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(40.5, 41.0);
  for (auto& v : pts) v = u(rng);
  for (auto& v : cents) v = u(rng);
  std::vector<std::size_t> assignment(points);
  for (auto _ : state) {
    const double inertia = Parallel ? kernels::assign_nearest_parallel(pts, cents, assignment)
                                    : kernels::assign_nearest_serial(pts, cents, assignment);
    benchmark::DoNotOptimize(inertia);
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * points));
}
BENCHMARK(BM_Assign<false>)->Name("kmeans_assign/serial")->Arg(10000)->Arg(100000);
BENCHMARK(BM_Assign<true>)->Name("kmeans_assign/parallel")->Arg(10000)->Arg(100000);

// One epoch of sharded forward/backward + Adam over a synthetic dataset, at
// the given thread count.
void BM_TrainEpoch(benchmark::State& state) {
  const int saved = kernels::max_threads();
  kernels::set_num_threads(static_cast<int>(state.range(0)));
  cli::AppConfig app;
  auto& p = app.dataset.preprocess;
  p.format.has_header = true;
  p.format.time_format = TimeFormat::Epoch;
  p.min_user_checkins = 2;
  p.min_poi_visits = 1;
  p.geo_clusters = 4;
  app.model.d_user = app.model.d_poi = app.model.d_cat = app.model.d_geo = 16;
  app.model.hidden = 32;
  app.model.ff_dim = 64;
  app.model.layers = 1;
  app.model.dropout_embed = app.model.dropout_param = 0.0;
  app.train.batch_size = 64;
  std::ostringstream csv;
  synth::write_csv(synth::generate({}), csv);
  std::istringstream in(csv.str());
  const auto bundle = cli::preprocess(app, in);
  auto net = cli::make_model(app, bundle);
  const auto samples = train::prepare_samples(net->config(), bundle.split.train, false);
  auto opt = train::OptimizerState::for_params(net->params());
  std::size_t epoch = 0;
  for (auto _ : state) train::train_epoch(*net, samples, opt, app.train, epoch++, 1);
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * samples.size()));
  kernels::set_num_threads(saved);
}
BENCHMARK(BM_TrainEpoch)->Name("train_epoch/threads")->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
