#include <benchmark/benchmark.h>

#include "volflow/flow.hpp"
#include "volflow/metrics.hpp"
#include "volflow/phantom.hpp"

using namespace volflow;

namespace {

Tensor randn(Shape shape, Rng& rng) {
  std::vector<float> v(static_cast<size_t>(numel(shape)));
  for (auto& e : v) e = static_cast<float>(rng.normal());
  return Tensor::constant(std::move(shape), std::move(v));
}

void BM_MatmulForward(benchmark::State& state) {
  int64_t n = state.range(0);
  Rng rng(1);
  Tensor a = randn({n, n}, rng), b = randn({n, n}, rng);
  for (auto _ : state) {
    Tensor c = matmul(a, b);
    benchmark::DoNotOptimize(c.values().data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_MatmulForward)->Arg(64)->Arg(128)->Arg(256);

void BM_TransformerForward(benchmark::State& state) {
  ModelConfig cfg = ModelConfig::preset(ModelSize::Tiny);
  auto params = init_params<float>(cfg, 1);
  auto bound = bind_params(params, static_cast<Tape*>(nullptr), false);
  Rng rng(2);
  Tensor x = randn({16, 16, 8, 8}, rng);
  Tensor cond = randn({16, 16, 8, 8}, rng);
  Tensor text = randn({256}, rng);
  for (auto _ : state) {
    Tensor v = velocity_forward(bound, x, 0.5, cond, text);
    benchmark::DoNotOptimize(v.values().data());
  }
}
BENCHMARK(BM_TransformerForward);

void BM_TrainStep(benchmark::State& state) {
  ModelConfig cfg = ModelConfig::preset(ModelSize::Tiny);
  auto params = init_params<float>(cfg, 1);
  Rng rng(3);
  PairSample sample;
  std::vector<LatentSlice> cond, target;
  for (int i = 0; i < 16; ++i) {
    LatentSlice c(8, 8), t(8, 8);
    for (auto& v : c.values) v = static_cast<float>(rng.normal());
    for (auto& v : t.values) v = static_cast<float>(rng.normal());
    cond.push_back(c);
    target.push_back(t);
  }
  sample.cond = LatentBlock(cond);
  sample.target = LatentBlock(target);
  sample.text = embed_report(Report{{0}, 64}, 1);
  std::vector<PairSample> batch(4, sample);
  for (auto _ : state) {
    Rng noise(7);
    FmLoss out = fm_loss(params, batch, noise, 1);
    benchmark::DoNotOptimize(out.loss);
  }
}
BENCHMARK(BM_TrainStep);

void BM_EncodeSlice(benchmark::State& state) {
  CodecBasis basis = build_basis(1);
  PhantomSpec spec;
  spec.resolution = 64;
  spec.length_slices = 4;
  spec.seed = 1;
  Volume v = generate_phantom(spec);
  for (auto _ : state) {
    LatentSlice l = encode_slice(v.slices[0], basis);
    benchmark::DoNotOptimize(l.values.data());
  }
}
BENCHMARK(BM_EncodeSlice);

void BM_ClipFeatures(benchmark::State& state) {
  FeatureNet net = make_feature_net(17);
  PhantomSpec spec;
  spec.resolution = 64;
  spec.length_slices = 16;
  spec.seed = 1;
  Volume v = generate_phantom(spec);
  for (auto _ : state) {
    auto f = clip_features(net, v.slices, 0, 16);
    benchmark::DoNotOptimize(f.data());
  }
}
BENCHMARK(BM_ClipFeatures);

void BM_FrechetDistance(benchmark::State& state) {
  Rng rng(4);
  FeatureMatrix a, b;
  std::vector<double> row(64);
  for (int i = 0; i < 500; ++i) {
    for (auto& v : row) v = rng.normal();
    a.append(row);
    for (auto& v : row) v = rng.normal() + 0.1;
    b.append(row);
  }
  FrechetStats sa = fit_stats(a), sb = fit_stats(b);
  for (auto _ : state) {
    double d = frechet_distance(sa, sb);
    benchmark::DoNotOptimize(d);
  }
}
BENCHMARK(BM_FrechetDistance);

}  // namespace

BENCHMARK_MAIN();
