#include <benchmark/benchmark.h>

#include "kfdaseg/random.h"
#include "kfdaseg/stitch.h"

using namespace kfdaseg;

namespace {

// A 4-wide joint region with 30% disagreement between the two observations.
StitchProblem band(int length) {
  Rng rng(5);
  StitchProblem p;
  p.orientation = Orientation::kVertical;
  p.rows = 4;
  p.cols = length;
  p.obs_a.resize(p.nodes());
  for (int c = 0; c < length; ++c) {
    const auto l = static_cast<std::uint8_t>(1 + (c / 8) % 3);
    for (int r = 0; r < 4; ++r) p.obs_a[r * length + c] = l;
  }
  p.obs_b = p.obs_a;
  for (auto& v : p.obs_b) {
    if (rng.uniform() < 0.3) v = static_cast<std::uint8_t>(1 + rng.below(3));
  }
  return p;
}

void BM_Anneal(benchmark::State& state) {
  const StitchProblem p = band(static_cast<int>(state.range(0)));
  const PotentialTables pt = build_potentials(p);
  AnnealSchedule s;
  for (auto _ : state) benchmark::DoNotOptimize(simulated_anneal(p, pt, s));
}
BENCHMARK(BM_Anneal)->Arg(16)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_ExactMap(benchmark::State& state) {
  const StitchProblem p = band(static_cast<int>(state.range(0)));
  const PotentialTables pt = build_potentials(p);
  for (auto _ : state) benchmark::DoNotOptimize(exact_map(p, pt));
}
BENCHMARK(BM_ExactMap)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
