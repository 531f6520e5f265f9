#include <benchmark/benchmark.h>

#include "vldet/fusion.hpp"
#include "vldet/ops.hpp"
#include "vldet/params.hpp"
#include "vldet/rng.hpp"
#include "vldet/roi.hpp"
#include "vldet/tensor.hpp"

namespace {

vldet::Tensor randn(vldet::Rng& rng, const std::vector<std::size_t>& shape) {
  vldet::Tensor t = vldet::Tensor::zeros(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
  return t;
}

void BM_MatMul(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  vldet::Rng rng(7);
  const vldet::Tensor a = randn(rng, {n, n});
  const vldet::Tensor b = randn(rng, {n, n});
  vldet::Tensor c = vldet::Tensor::zeros({n, n});
  for (auto _ : state) {
    vldet::matmul_raw(a.data(), b.data(), c.data(), n, n, n, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_MatMul)->Arg(32)->Arg(64)->Arg(128);

void BM_Conv3x3(benchmark::State& state) {
  const std::size_t hw = static_cast<std::size_t>(state.range(0));
  vldet::Rng rng(7);
  const vldet::Var x = vldet::make_constant(randn(rng, {hw, hw, 16}));
  const vldet::Var w = vldet::make_constant(randn(rng, {3, 3, 16, 16}));
  const vldet::Var b = vldet::make_constant(randn(rng, {16}));
  for (auto _ : state) {
    const vldet::Var y = vldet::conv2d(x, w, b, 1, 1);
    benchmark::DoNotOptimize(y->value.data());
  }
}
BENCHMARK(BM_Conv3x3)->Arg(16)->Arg(32)->Arg(64);

void BM_VlFuseForwardBackward(benchmark::State& state) {
  const std::size_t tokens = static_cast<std::size_t>(state.range(0));
  vldet::Rng rng(7);
  vldet::Registry reg;
  const vldet::CrossAttentionParams p =
      vldet::make_vl_fuse(reg, "fuse", 64, 32, 4, rng);
  const vldet::Tensor v = randn(rng, {tokens, 64});
  const vldet::Tensor l = randn(rng, {8, 32});
  for (auto _ : state) {
    reg.zero_grads();
    const vldet::Var vv = vldet::make_leaf(v, true);
    const vldet::Var lv = vldet::make_leaf(l, true);
    const auto [v2, l2] = vldet::vl_fuse(vv, lv, p);
    const vldet::Var loss =
        vldet::add(vldet::mean_all(v2), vldet::mean_all(l2));
    vldet::backward(loss);
    benchmark::DoNotOptimize(vv->grad().data());
  }
}
BENCHMARK(BM_VlFuseForwardBackward)->Arg(16)->Arg(64)->Arg(256);

void BM_RoiAlign(benchmark::State& state) {
  vldet::Rng rng(7);
  const vldet::Var feat = vldet::make_constant(randn(rng, {16, 16, 64}));
  const vldet::Box box{3.0, 5.0, 41.0, 50.0};
  for (auto _ : state) {
    const vldet::Var patch = vldet::roi_align(feat, box, 4.0);
    benchmark::DoNotOptimize(patch->value.data());
  }
}
BENCHMARK(BM_RoiAlign);

}  // namespace

BENCHMARK_MAIN();
