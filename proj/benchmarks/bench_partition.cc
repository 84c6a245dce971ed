#include <benchmark/benchmark.h>

#include "kfdaseg/partition.h"
#include "kfdaseg/phantom.h"
#include "kfdaseg/volume_io.h"

using namespace kfdaseg;

namespace {

MultiChannelVolume phantom_volume(int n) {
  PhantomSpec spec;
  spec.dims = Dims{n, n, n};
  return normalize_intensities(generate_phantom(spec).volume);
}

void BM_BestCut(benchmark::State& state) {
  const MultiChannelVolume vol = phantom_volume(static_cast<int>(state.range(0)));
  const Box box = Box::whole(vol.dims());
  for (auto _ : state) benchmark::DoNotOptimize(best_cut(vol, box));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(vol.voxel_count()));
}
BENCHMARK(BM_BestCut)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_Partition(benchmark::State& state) {
  const MultiChannelVolume vol = phantom_volume(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(partition(vol));
}
BENCHMARK(BM_Partition)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
