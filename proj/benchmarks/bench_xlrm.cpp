#include <benchmark/benchmark.h>

#include "xlrm/trainer.hpp"

#include <random>

using namespace xlrm;

namespace {

ScannerGeometry bench_geometry(int det, int views) {
  ScannerGeometry g = desk_scale_geometry();
  g.det_rows = g.det_cols = det;
  g.pixel_mm = 3.9 * 4.0 * (64.0 / det);
  return make_circular_geometry(views, g);
}

VolumeGrid bench_volume(int r) {
  std::mt19937_64 rng(42);
  return rasterize_phantom(random_phantom(rng), r);
}

void BM_ProjectRaw(benchmark::State& state) {
  const int r = int(state.range(0));
  const VolumeGrid vol = bench_volume(r);
  const ScannerGeometry g = bench_geometry(64, 6);
  for (auto _ : state) benchmark::DoNotOptimize(project_raw(vol, g, 1.0 / r));
  state.SetItemsProcessed(state.iterations() * 6 * 64 * 64);
}
BENCHMARK(BM_ProjectRaw)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_BackprojectRaw(benchmark::State& state) {
  const int r = int(state.range(0));
  const ScannerGeometry g = bench_geometry(64, 6);
  std::vector<float> raw(size_t(6) * 64 * 64, 0.5f);
  for (auto _ : state) benchmark::DoNotOptimize(backproject_raw(raw, g, r, 1.0 / r));
  state.SetItemsProcessed(state.iterations() * 6 * 64 * 64);
}
BENCHMARK(BM_BackprojectRaw)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_SartIteration(benchmark::State& state) {
  const int r = 32;
  const VolumeGrid vol = bench_volume(r);
  const ProjectionSet proj = project(vol, bench_geometry(32, 10), 1.0 / r);
  for (auto _ : state) benchmark::DoNotOptimize(sart_reconstruct(proj, r, 1, 0.25));
}
BENCHMARK(BM_SartIteration)->Unit(benchmark::kMillisecond);

void BM_EncoderForward(benchmark::State& state) {
  const int views = int(state.range(0));
  const EncoderConfig cfg = EncoderConfig::desk_scale();
  Tokenizer<float> tok(cfg);
  Encoder<float> enc(cfg);
  std::mt19937_64 rng(1);
  tok.init(rng);
  enc.init(rng);
  const VolumeGrid vol = bench_volume(32);
  const ProjectionSet proj = project(vol, bench_geometry(64, views), 1.0 / 32);
  for (auto _ : state) benchmark::DoNotOptimize(enc.forward(tok.forward(proj)));
}
BENCHMARK(BM_EncoderForward)->Arg(6)->Arg(10)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  ScannerGeometry g = desk_scale_geometry();
  const int r = 32;
  TrainConfig tcfg;
  tcfg.view_counts = {6, 8, 10};
  tcfg.batch_size = 1;
  tcfg.points_per_step = int(state.range(0));
  tcfg.seed = 3;

  std::mt19937_64 rng(9);
  TrainSample sample;
  sample.gt = rasterize_phantom(random_phantom(rng), r);
  NoiseModel noiseless;
  noiseless.photon_count = 0;
  for (int v : tcfg.view_counts)
    sample.projections[v] = render_views(sample.gt, g, v, noiseless, 0);

  Trainer trainer(EncoderConfig::desk_scale(), DecoderConfig::desk_scale(), tcfg);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.train_step({&sample}));
}
BENCHMARK(BM_TrainStep)->Arg(512)->Arg(2048)->Unit(benchmark::kMillisecond);

void BM_ReconstructVolume(benchmark::State& state) {
  ScannerGeometry g = desk_scale_geometry();
  const int r = 32;
  std::mt19937_64 rng(9);
  const VolumeGrid vol = rasterize_phantom(random_phantom(rng), r);
  NoiseModel noiseless;
  noiseless.photon_count = 0;
  const ProjectionSet proj = render_views(vol, g, 6, noiseless, 0);
  XlrmModel<float> model(EncoderConfig::desk_scale(), DecoderConfig::desk_scale(),
                         Ablation::Full);
  model.init(4);
  for (auto _ : state) benchmark::DoNotOptimize(model.reconstruct(proj, r));
}
BENCHMARK(BM_ReconstructVolume)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
