#include <benchmark/benchmark.h>

#include "dsnet/backbone.hpp"
#include "dsnet/blocks.hpp"
#include "dsnet/rf_lint.hpp"

namespace {

using namespace dsnet;

std::vector<ConvLayerSpec> chain(int length) {
  std::vector<ConvLayerSpec> c;
  for (int i = 0; i < length; ++i) c.push_back(ConvLayerSpec{3, 1 + i % 5, 1 + (i % 4 == 0), 1, 1});
  return c;
}

void BM_ReceptiveField(benchmark::State& state) {
  const auto c = chain(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(receptive_field(c).final_rf());
}
BENCHMARK(BM_ReceptiveField)->Arg(16)->Arg(256);

void BM_EmpiricalRF(benchmark::State& state) {
  const std::vector<ConvLayerSpec> c{{3, 2, 1, 1, 1}, {3, 2, 1, 1, 1}, {3, 2, 1, 1, 1}};
  for (auto _ : state) benchmark::DoNotOptimize(empirical_rf(c, static_cast<int>(state.range(0))));
}
BENCHMARK(BM_EmpiricalRF)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_PaddingFraction(benchmark::State& state) {
  const ConvLayerSpec spec{3, 15, 1, 1, 1};
  for (auto _ : state) benchmark::DoNotOptimize(padding_fraction(spec, static_cast<int>(state.range(0))));
}
BENCHMARK(BM_PaddingFraction)->Arg(28)->Arg(128);

void BM_Lint(benchmark::State& state) {
  const auto cfg = dsnet_config();
  for (auto _ : state) benchmark::DoNotOptimize(lint(cfg).findings.size());
}
BENCHMARK(BM_Lint);

void BM_MFACBForward(benchmark::State& state) {
  torch::NoGradGuard g;
  const int c = static_cast<int>(state.range(0));
  MFACB block(MFACBConfig{c, {c, c, c}, {2, 2, 2}});
  block->eval();
  const auto x = torch::randn({1, c, 64, 128});
  for (auto _ : state) benchmark::DoNotOptimize(block->forward(x));
}
BENCHMARK(BM_MFACBForward)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_MSAFForward(benchmark::State& state) {
  torch::NoGradGuard g;
  MSAConfig cfg;
  cfg.channels = static_cast<int>(state.range(0));
  MSAF fuse(cfg);
  fuse->eval();
  const auto c = torch::randn({1, cfg.channels, 64, 128});
  const auto s = torch::randn({1, cfg.channels, 64, 128});
  for (auto _ : state) benchmark::DoNotOptimize(fuse->forward(c, s));
}
BENCHMARK(BM_MSAFForward)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_DSNetForward(benchmark::State& state) {
  torch::NoGradGuard g;
  auto model = build_model(dsnet_config());
  model->eval();
  const auto x = torch::randn({1, 3, state.range(0), 2 * state.range(0)});
  for (auto _ : state) benchmark::DoNotOptimize(model->forward(x));
}
BENCHMARK(BM_DSNetForward)->Arg(256)->Arg(512)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
