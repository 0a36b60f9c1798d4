#include <benchmark/benchmark.h>

#include <vector>

#include "datamodels/embeddings.hpp"
#include "datamodels/estimators.hpp"
#include "datamodels/formats.hpp"
#include "datamodels/rng.hpp"
#include "datamodels/sampling.hpp"

namespace {

void BM_SampleMasks(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    auto masks = dm::sample_masks({d, 0.5, 1}, 1000, 1);
    benchmark::DoNotOptimize(masks);
  }
  state.SetItemsProcessed(state.iterations() * 1000);
}
BENCHMARK(BM_SampleMasks)->Arg(150)->Arg(1000)->Arg(10000);

void BM_LassoSaga(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const std::size_t m = 4 * d;
  const auto masks = dm::sample_masks({d, 0.5, 2}, m, 1);
  dm::Rng rng(3);
  std::vector<double> y(m);
  for (std::size_t i = 0; i < m; ++i) {
    double v = 0.0;
    masks.row(i).for_each_set([&](std::size_t j) { v += j % 10 == 0 ? 0.1 : 0.0; });
    y[i] = v + 0.1 * rng.normal();
  }
  const double lambda = 0.05 * dm::lasso_lambda_max(masks, y);
  for (auto _ : state) {
    auto sol = dm::lasso_saga(masks, y, lambda, dm::SagaConfig{});
    benchmark::DoNotOptimize(sol);
  }
}
BENCHMARK(BM_LassoSaga)->Arg(100)->Arg(500)->Unit(benchmark::kMillisecond);

void BM_RbfSimilarity(benchmark::State& state) {
  const auto n = static_cast<Eigen::Index>(state.range(0));
  dm::EmbeddingMatrix e;
  e.rows = Eigen::MatrixXd::Random(n, 200);
  for (auto _ : state) {
    auto k = dm::rbf_similarity(e);
    benchmark::DoNotOptimize(k);
  }
}
BENCHMARK(BM_RbfSimilarity)->Arg(200)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_EncodeMasks(benchmark::State& state) {
  const auto masks = dm::sample_masks({1000, 0.5, 4}, 2000, 1);
  for (auto _ : state) {
    auto bytes = dm::encode_masks(masks);
    benchmark::DoNotOptimize(bytes);
  }
}
BENCHMARK(BM_EncodeMasks)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
