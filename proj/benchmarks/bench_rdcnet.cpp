#include <benchmark/benchmark.h>

#include "rdcnet/decoder.hpp"
#include "rdcnet/loss.hpp"
#include "rdcnet/model.hpp"
#include "rdcnet/ops.hpp"
#include "rdcnet/synthetic.hpp"

using namespace rdc;

namespace {

Tensor random_input(const Shape& shape, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor::from_values(shape, v);
}

RDCNetConfig bench_model() {
  RDCNetConfig c;
  c.groups = 4;
  c.group_channels = 16;
  c.dilation_rates = {1, 2, 4};
  c.iterations = 5;
  c.scale = 2;
  return c;
}

}  // namespace

static void BM_Conv2d3x3(benchmark::State& state) {
  const auto channels = state.range(0);
  const Tensor x = random_input({1, channels, 32, 32}, 1);
  const Tensor w = random_input({channels, channels / 4, 3, 3}, 2);
  Conv2dOptions opt;
  opt.padding = {2, 2};
  opt.dilation = {2, 2};
  opt.groups = 4;
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, Tensor{}, opt));
}
BENCHMARK(BM_Conv2d3x3)->Arg(32)->Arg(64)->Unit(benchmark::kMicrosecond);

static void BM_ForwardInference(benchmark::State& state) {
  RDCNetConfig c = bench_model();
  Rng rng(0);
  const ParamGroup params = build(c, rng);
  const Tensor image = random_input({1, 3, 64, 64}, 3);
  NoGradGuard no_grad;
  for (auto _ : state) {
    Rng r(0);
    benchmark::DoNotOptimize(forward_final(image, params, c, false, r, static_cast<int>(state.range(0))));
  }
}
BENCHMARK(BM_ForwardInference)->Arg(1)->Arg(5)->Arg(10)->Unit(benchmark::kMillisecond);

static void BM_TrainingStep(benchmark::State& state) {
  RDCNetConfig c = bench_model();
  Rng rng(0);
  ParamGroup params = build(c, rng);
  SyntheticConfig sc;
  const auto samples = generate_synthetic(2, sc, Rng(4));
  const Tensor batch = to_batch({&samples[0].image, &samples[1].image});
  const std::vector<LabelMap> labels{samples[0].labels, samples[1].labels};
  LossConfig lc;
  lc.margin = 6.0;
  for (auto _ : state) {
    Rng r(1);
    params.zero_grad();
    const auto out = forward_final(batch, params, c, true, r);
    esj_total(std::span<const IterationOutput>(&out, 1), labels, lc).backward();
    adam_step(params, 1e-3, 0.9, 0.999, 1e-8);
  }
}
BENCHMARK(BM_TrainingStep)->Unit(benchmark::kMillisecond);

static void BM_Decode(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  SyntheticConfig sc;
  sc.size = n;
  const Sample s = generate_synthetic(1, sc, Rng(5))[0];
  FloatImage probs(2, n, n), emb(2, n, n);
  const std::size_t plane = probs.plane_size();
  Rng rng(6);
  for (std::size_t u = 0; u < plane; ++u) {
    const bool fg = s.labels.ids[u] != 0;
    probs.values[plane + u] = fg ? 0.9f : 0.1f;
    probs.values[u] = 1.0f - probs.values[plane + u];
    emb.values[u] = static_cast<float>(u / static_cast<std::size_t>(n)) + static_cast<float>(rng.normal());
    emb.values[plane + u] = static_cast<float>(u % static_cast<std::size_t>(n)) + static_cast<float>(rng.normal());
  }
  DecoderConfig cfg;
  cfg.window = 13;
  for (auto _ : state) benchmark::DoNotOptimize(decode(probs, emb, cfg));
}
BENCHMARK(BM_Decode)->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
