#include <benchmark/benchmark.h>

#include "oasislab/attention.hpp"
#include "oasislab/kernels.hpp"
#include "oasislab/rng.hpp"
#include "reference.hpp"

using namespace oasis;

namespace {

Tensor random_square(std::int64_t n, const char* label) {
  Rng rng(91);
  Rng f = rng.fork(label);
  return sample_gaussian(f, {n, n}, 0.0, 1.0);
}

AttentionParams random_params(Rng& rng, std::int64_t d, bool gated) {
  auto mk = [&](const char* label) {
    Rng f = rng.fork(label);
    return sample_gaussian(f, {d, d}, 0.0, 0.5);
  };
  AttentionParams p;
  p.wq = mk("wq");
  p.wk = mk("wk");
  p.wv = mk("wv");
  p.wo = mk("wo");
  if (gated) {
    p.wg = mk("wg");
    Rng f = rng.fork("bg");
    p.bg = sample_gaussian(f, {d}, 0.0, 0.5);
  }
  return p;
}

void bm_matmul(benchmark::State& state) {
  const std::int64_t n = state.range(0);
  const Tensor a = random_square(n, "a"), b = random_square(n, "b");
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * n * n * n);
}

void bm_matmul_ref(benchmark::State& state) {
  const std::int64_t n = state.range(0);
  const Tensor a = random_square(n, "a"), b = random_square(n, "b");
  for (auto _ : state) benchmark::DoNotOptimize(refimpl::matmul(a, b));
  state.SetItemsProcessed(state.iterations() * n * n * n);
}

void bm_matmul_tn(benchmark::State& state) {
  const std::int64_t n = state.range(0);
  const Tensor a = random_square(n, "a"), b = random_square(n, "b");
  for (auto _ : state) benchmark::DoNotOptimize(matmul_tn(a, b));
}

void bm_matmul_tn_ref(benchmark::State& state) {
  const std::int64_t n = state.range(0);
  const Tensor a = random_square(n, "a"), b = random_square(n, "b");
  for (auto _ : state) benchmark::DoNotOptimize(refimpl::matmul_tn(a, b));
}

void bm_matmul_nt(benchmark::State& state) {
  const std::int64_t n = state.range(0);
  const Tensor a = random_square(n, "a"), b = random_square(n, "b");
  for (auto _ : state) benchmark::DoNotOptimize(matmul_nt(a, b));
}

void bm_matmul_nt_ref(benchmark::State& state) {
  const std::int64_t n = state.range(0);
  const Tensor a = random_square(n, "a"), b = random_square(n, "b");
  for (auto _ : state) benchmark::DoNotOptimize(refimpl::matmul_nt(a, b));
}

void bm_attend(benchmark::State& state) {
  const std::int64_t t = state.range(0);
  AttentionConfig cfg;
  cfg.d_model = 64;
  cfg.n_heads = 4;
  Rng rng(17);
  const AttentionParams p = random_params(rng, cfg.d_model, false);
  Rng xr = rng.fork("x");
  const Tensor x = sample_gaussian(xr, {t, cfg.d_model}, 0.0, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(attend(cfg, x, p));
}

void bm_attend_ref(benchmark::State& state) {
  const std::int64_t t = state.range(0);
  AttentionConfig cfg;
  cfg.d_model = 64;
  cfg.n_heads = 4;
  Rng rng(17);
  const AttentionParams p = random_params(rng, cfg.d_model, false);
  Rng xr = rng.fork("x");
  const Tensor x = sample_gaussian(xr, {t, cfg.d_model}, 0.0, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(refimpl::attend_naive(cfg, x, p));
}

}  // namespace

BENCHMARK(bm_matmul)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(bm_matmul_ref)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(bm_matmul_tn)->Arg(128);
BENCHMARK(bm_matmul_tn_ref)->Arg(128);
BENCHMARK(bm_matmul_nt)->Arg(128);
BENCHMARK(bm_matmul_nt_ref)->Arg(128);
BENCHMARK(bm_attend)->Arg(32)->Arg(128);
BENCHMARK(bm_attend_ref)->Arg(32)->Arg(128);

BENCHMARK_MAIN();
