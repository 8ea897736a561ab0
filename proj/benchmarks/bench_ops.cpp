#include <benchmark/benchmark.h>

#include "hnfl/ops.hpp"
#include "hnfl/rng.hpp"
#include "hnfl/tensor.hpp"

namespace {

using namespace hnfl;

Tensor randn(std::vector<std::int64_t> shape, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data) v = rng.normal();
  return t;
}

void BM_DenseForward(benchmark::State& state) {
  Rng rng(1);
  std::int64_t batch = state.range(0);
  Tensor x = randn({batch, 256}, rng);
  Tensor W = randn({256, 128}, rng);
  Tensor b = randn({128}, rng);
  DenseCache cache;
  for (auto _ : state) {
    Tensor y = dense_forward(x, W, b, cache);
    benchmark::DoNotOptimize(y.data.data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_DenseForward)->Arg(16)->Arg(64)->Arg(256);

void BM_DenseBackward(benchmark::State& state) {
  Rng rng(2);
  std::int64_t batch = state.range(0);
  Tensor x = randn({batch, 256}, rng);
  Tensor W = randn({256, 128}, rng);
  Tensor b = randn({128}, rng);
  DenseCache cache;
  Tensor y = dense_forward(x, W, b, cache);
  Tensor gy = randn(y.shape, rng);
  for (auto _ : state) {
    Tensor gx, gW, gb;
    dense_backward(gy, cache, gx, gW, gb);
    benchmark::DoNotOptimize(gx.data.data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_DenseBackward)->Arg(16)->Arg(64)->Arg(256);

void BM_Conv2dForward(benchmark::State& state) {
  Rng rng(3);
  std::int64_t batch = state.range(0);
  Tensor x = randn({batch, 8, 16, 16}, rng);
  Tensor K = randn({16, 8, 3, 3}, rng);
  Tensor b = randn({16}, rng);
  Conv2dCache cache;
  for (auto _ : state) {
    Tensor y = conv2d_forward(x, K, b, 1, 1, cache);
    benchmark::DoNotOptimize(y.data.data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_Conv2dForward)->Arg(4)->Arg(16);

void BM_Conv2dBackward(benchmark::State& state) {
  Rng rng(4);
  std::int64_t batch = state.range(0);
  Tensor x = randn({batch, 8, 16, 16}, rng);
  Tensor K = randn({16, 8, 3, 3}, rng);
  Tensor b = randn({16}, rng);
  Conv2dCache cache;
  Tensor y = conv2d_forward(x, K, b, 1, 1, cache);
  Tensor gy = randn(y.shape, rng);
  for (auto _ : state) {
    Tensor gx, gK, gb;
    conv2d_backward(gy, cache, gx, gK, gb);
    benchmark::DoNotOptimize(gx.data.data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_Conv2dBackward)->Arg(4)->Arg(16);

}  // namespace
