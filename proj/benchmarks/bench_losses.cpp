#include <benchmark/benchmark.h>

#include <algorithm>
#include <vector>

#include "weakmil/cpal.hpp"
#include "weakmil/evalkit.hpp"
#include "weakmil/milhead.hpp"

using namespace weakmil;

namespace {

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.normal();
  return m;
}

// batch_size bags over `classes` identities, each labeled with 3 of them.
std::vector<BagView> make_batch(int classes, int dim, int frames, int batch_size, Rng& rng) {
  std::vector<BagView> batch;
  for (int b = 0; b < batch_size; ++b) {
    std::vector<int> labels{b % classes, (b + 1) % classes, (b + 2) % classes};
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    batch.push_back({b, 0, FeatureMatrix(gaussian(dim, frames, rng)), labels});
  }
  return batch;
}

void BM_MilLoss(benchmark::State& state) {
  Rng rng(1);
  const int frames = static_cast<int>(state.range(0));
  ProjectionParams p = ProjectionParams::initialize(64, 128, rng);
  auto batch = make_batch(64, 128, frames, 10, rng);
  for (auto _ : state) benchmark::DoNotOptimize(mil_loss(batch, p, 5).value);
  state.SetItemsProcessed(state.iterations() * 10 * frames);
}
BENCHMARK(BM_MilLoss)->Arg(20)->Arg(100);

void BM_CpalTotal(benchmark::State& state) {
  Rng rng(2);
  const int frames = static_cast<int>(state.range(0));
  ProjectionParams p = ProjectionParams::initialize(16, 128, rng, state.range(1) != 0);
  auto batch = make_batch(16, 128, frames, 10, rng);
  for (auto _ : state) benchmark::DoNotOptimize(cpal_total(batch, p).value);
}
BENCHMARK(BM_CpalTotal)->Args({20, 0})->Args({100, 0})->Args({100, 1});

void BM_CoarseRank(benchmark::State& state) {
  Rng rng(3);
  const auto gallery_size = static_cast<int>(state.range(0));
  std::vector<GalleryBag> gallery;
  for (int g = 0; g < gallery_size; ++g) gallery.push_back({g, FeatureMatrix(gaussian(64, 60, rng)), {g % 16}, 0});
  ProbeQuery q{0, FeatureMatrix(gaussian(64, 10, rng)), 3, 1};
  for (auto _ : state) benchmark::DoNotOptimize(coarse_rank(q, gallery).ranked_ids.data());
  state.SetItemsProcessed(state.iterations() * gallery_size);
}
BENCHMARK(BM_CoarseRank)->Arg(100)->Arg(1000);

void BM_FineRank(benchmark::State& state) {
  Rng rng(4);
  const auto gallery_size = static_cast<int>(state.range(0));
  std::vector<GalleryTracklet> gallery;
  for (int g = 0; g < gallery_size; ++g) gallery.push_back({g, FeatureMatrix(gaussian(64, 12, rng)), g % 16, g % 6});
  ProbeQuery q{0, FeatureMatrix(gaussian(64, 10, rng)), 3, 1};
  for (auto _ : state) benchmark::DoNotOptimize(fine_rank(q, gallery).ranked_ids.data());
  state.SetItemsProcessed(state.iterations() * gallery_size);
}
BENCHMARK(BM_FineRank)->Arg(100)->Arg(1000);

}  // namespace

BENCHMARK_MAIN();
