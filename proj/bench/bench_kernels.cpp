#include <benchmark/benchmark.h>

#include "mama/kernels.hpp"
#include "mama/random.hpp"

using namespace mama;

namespace {

Matrix filled(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(r, c);
  for (auto& v : m.values()) v = normal(rng);
  return m;
}

template <void (*Gemm)(const Matrix&, const Matrix&, Matrix&, bool)>
void run_gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = filled(n, n, 1), b = filled(n, n, 2);
  Matrix out;
  for (auto _ : state) {
    Gemm(a, b, out, false);
    benchmark::DoNotOptimize(out.values().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

}  // namespace

BENCHMARK(run_gemm<kernels::serial::gemm>)->Name("gemm/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(run_gemm<kernels::gemm>)->Name("gemm/openmp")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(run_gemm<kernels::serial::gemm_nt>)->Name("gemm_nt/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(run_gemm<kernels::gemm_nt>)->Name("gemm_nt/openmp")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(run_gemm<kernels::serial::gemm_tn>)->Name("gemm_tn/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(run_gemm<kernels::gemm_tn>)->Name("gemm_tn/openmp")->RangeMultiplier(2)->Range(32, 256);

BENCHMARK_MAIN();
