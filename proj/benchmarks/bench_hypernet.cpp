#include <benchmark/benchmark.h>

#include "hnfl/hypernet.hpp"
#include "hnfl/rng.hpp"

namespace {

using namespace hnfl;

Hypernetwork make_hypernet(std::int64_t clients, std::int64_t params_per_client) {
  HypernetConfig cfg;
  Hypernetwork hn(cfg, 7);
  for (std::int64_t i = 0; i < clients; ++i) hn.register_client(i, params_per_client);
  return hn;
}

void BM_GenerateParams(benchmark::State& state) {
  std::int64_t k = state.range(0);
  Hypernetwork hn = make_hypernet(10, k);
  for (auto _ : state) {
    FlatParams p = hn.serve_client(3);
    benchmark::DoNotOptimize(p.values.data());
  }
  state.SetItemsProcessed(state.iterations() * k);
}
BENCHMARK(BM_GenerateParams)->Arg(1210)->Arg(13562);

void BM_VjpForClient(benchmark::State& state) {
  std::int64_t k = state.range(0);
  Hypernetwork hn = make_hypernet(10, k);
  hn.serve_client(3);
  Rng rng(8);
  std::vector<double> upstream(static_cast<std::size_t>(k));
  for (double& v : upstream) v = rng.normal();
  for (auto _ : state) {
    HypernetGrads g = hn.vjp_for_client(3, upstream);
    benchmark::DoNotOptimize(g.embedding.data.data());
  }
  state.SetItemsProcessed(state.iterations() * k);
}
BENCHMARK(BM_VjpForClient)->Arg(1210)->Arg(13562);

}  // namespace
