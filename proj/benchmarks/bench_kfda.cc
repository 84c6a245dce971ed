#include <benchmark/benchmark.h>

#include "kfdaseg/kernel.h"
#include "kfdaseg/kfda.h"
#include "kfdaseg/random.h"

using namespace kfdaseg;

namespace {

// l training samples from a 12^3 box of random intensities, two classes.
struct Setup {
  RegionSamples region;
  TrainingSet ts;
  Eigen::MatrixXd cross;
  NeighborGraph graph;
};

Setup make_setup(int l, const KernelSpec& spec) {
  const Dims d{12, 12, 12};
  Rng rng(3);
  std::vector<float> data(d.voxel_count() * 3);
  for (float& v : data) v = static_cast<float>(rng.uniform());
  const MultiChannelVolume vol(d, 3, data, std::vector<std::uint8_t>(d.voxel_count(), 1));
  Setup s;
  s.region = gather_region(vol, Box::whole(d));
  s.ts.x.resize(l, 3);
  for (int i = 0; i < l; ++i) {
    s.ts.x.row(i) = s.region.features.row(i * 2);
    s.ts.y.push_back(s.ts.x(i, 0) < 0.5 ? -1 : 1);
    s.ts.region_index.push_back(i * 2);
  }
  s.cross = kernel_matrix(spec, s.ts.x, s.region.features);
  s.graph = build_neighbor_graph(s.region.coords);
  return s;
}

void BM_BuildMatrices(benchmark::State& state) {
  const KernelSpec spec = KernelSpec::rbf(0.5);
  const Setup s = make_setup(static_cast<int>(state.range(0)), spec);
  for (auto _ : state) benchmark::DoNotOptimize(build_matrices(s.ts, spec, &s.cross, &s.graph));
}
BENCHMARK(BM_BuildMatrices)->Arg(100)->Arg(300)->Arg(600)->Unit(benchmark::kMillisecond);

void BM_SolveAlpha(benchmark::State& state) {
  const KernelSpec spec = KernelSpec::rbf(0.5);
  const Setup s = make_setup(static_cast<int>(state.range(0)), spec);
  const KfdaMatrices mats = build_matrices(s.ts, spec, &s.cross, &s.graph);
  const double lambda = 1e-3 * mats.m.norm() / mats.penalty.norm();
  for (auto _ : state) benchmark::DoNotOptimize(solve_alpha(mats, s.ts, spec, lambda));
}
BENCHMARK(BM_SolveAlpha)->Arg(100)->Arg(300)->Arg(600)->Unit(benchmark::kMillisecond);

void BM_NeighborGraph(benchmark::State& state) {
  const Setup s = make_setup(10, KernelSpec::linear());
  for (auto _ : state) benchmark::DoNotOptimize(build_neighbor_graph(s.region.coords));
}
BENCHMARK(BM_NeighborGraph)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
