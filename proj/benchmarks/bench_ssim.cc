#include <benchmark/benchmark.h>

#include <vector>

#include "kfdaseg/random.h"
#include "kfdaseg/ssim.h"

using namespace kfdaseg;

namespace {

ScalarField noise_field(Dims d, std::uint64_t seed) {
  Rng rng(seed);
  ScalarField f{d, std::vector<double>(d.voxel_count())};
  for (double& v : f.values) v = rng.uniform();
  return f;
}

void BM_SsimPatch(benchmark::State& state) {
  Rng rng(1);
  std::vector<double> x(121), y(121);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = rng.uniform();
    y[i] = rng.uniform();
  }
  for (auto _ : state) benchmark::DoNotOptimize(ssim_patch(x, y));
}
BENCHMARK(BM_SsimPatch);

// The evaluator caches the reference; each call filters only the image.
void BM_MssimEvaluator(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const Dims d{n, n, 16};
  const ScalarField ref = noise_field(d, 2), img = noise_field(d, 3);
  const MssimEvaluator eval(ref, std::vector<std::uint8_t>(d.voxel_count(), 1));
  for (auto _ : state) benchmark::DoNotOptimize(eval(img));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(d.voxel_count()));
}
BENCHMARK(BM_MssimEvaluator)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
