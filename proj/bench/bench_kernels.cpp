// Serial reference against the OpenMP kernels. Arg 0 selects Serial, 1 Parallel.

#include <benchmark/benchmark.h>

#include <numeric>
#include <vector>

#include "refit/data.hpp"
#include "refit/diffusion.hpp"
#include "refit/eval.hpp"
#include "refit/exec.hpp"
#include "refit/finetune.hpp"
#include "refit/pretrain.hpp"

using namespace refit;

namespace {

Exec mode(const benchmark::State& st) { return st.range(0) ? Exec::Parallel : Exec::Serial; }

const data::InteractionMatrix& matrix() {
  static const auto m = data::generate_synthetic(2000, 1000, 0.98, 11);
  return m;
}

const diffusion::Denoiser& model() {
  static const auto d = diffusion::Denoiser::initialized({1000, 32, 16}, 12);
  return d;
}

const diffusion::DiffusionSchedule& schedule() {
  static const auto s = diffusion::build_schedule(5, 1e-4, 0.02);
  return s;
}

void BM_similarity_index(benchmark::State& st) {
  for (auto _ : st) benchmark::DoNotOptimize(data::build_similarity_index(matrix(), 10, mode(st)));
  st.SetLabel(mode(st) == Exec::Parallel ? "omp" : "serial");
}

void BM_elbo_batch(benchmark::State& st) {
  std::vector<data::UserId> users(256);
  std::iota(users.begin(), users.end(), 0);
  for (auto _ : st)
    benchmark::DoNotOptimize(diffusion::elbo_batch(model(), schedule(), matrix(), users, 3, {}, mode(st)));
  st.SetLabel(mode(st) == Exec::Parallel ? "omp" : "serial");
}

void BM_reinforce_gradient(benchmark::State& st) {
  std::vector<diffusion::Trajectory> trajs;
  for (data::UserId u = 0; u < 128; ++u)
    trajs.push_back(diffusion::sample_trajectory(model(), matrix().dense_row(u), schedule(), u));
  std::vector<double> rewards(trajs.size(), 1.0);
  for (auto _ : st) benchmark::DoNotOptimize(finetune::reinforce_gradient(model(), schedule(), trajs, rewards, mode(st)));
  st.SetLabel(mode(st) == Exec::Parallel ? "omp" : "serial");
}

void BM_evaluate(benchmark::State& st) {
  static const auto split = data::split_holdout(matrix(), 0.8, 0.1, 13);
  const std::vector<std::size_t> ns{10, 20};
  for (auto _ : st) benchmark::DoNotOptimize(eval::evaluate(model(), schedule(), split, ns, 5, mode(st)));
  st.SetLabel(mode(st) == Exec::Parallel ? "omp" : "serial");
}

}  // namespace

BENCHMARK(BM_similarity_index)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_elbo_batch)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_reinforce_gradient)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_evaluate)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
