#include <benchmark/benchmark.h>

#include "hnfl/data.hpp"

namespace {

using namespace hnfl;

const Dataset& corpus() {
  static Dataset ds = synth_blobs(10, 1000, 32, 0.5, 9);
  return ds;
}

void BM_PartitionQuantitySkew(benchmark::State& state) {
  std::int64_t clients = state.range(0);
  std::uint64_t seed = 0;
  for (auto _ : state) {
    PartitionPlan plan = partition_quantity_skew(corpus(), clients, 3, ++seed);
    benchmark::DoNotOptimize(plan.clients.data());
  }
}
BENCHMARK(BM_PartitionQuantitySkew)->Arg(10)->Arg(50);

void BM_PartitionDirichlet(benchmark::State& state) {
  std::int64_t clients = state.range(0);
  std::uint64_t seed = 0;
  for (auto _ : state) {
    PartitionPlan plan = partition_dirichlet(corpus(), clients, 0.5, ++seed);
    benchmark::DoNotOptimize(plan.clients.data());
  }
}
BENCHMARK(BM_PartitionDirichlet)->Arg(10)->Arg(50);

}  // namespace
