#include <benchmark/benchmark.h>

#include "onsurf/fitter.hpp"
#include "onsurf/knn_index.hpp"
#include "onsurf/reconstruct.hpp"
#include "onsurf/sampling.hpp"

using namespace onsurf;

namespace {

const ShapeOracle& torus() {
  static const ShapeOracle t = ShapeOracle::torus(0.6, 0.2);
  return t;
}

MlpModel sdf_network(std::size_t width, std::size_t layers) {
  MlpArchitecture arch;
  arch.hidden_dim = width;
  arch.num_layers = layers;
  arch.skip_layer = layers / 2;
  return init_model(arch, InitMode::geometric_sphere, 1);
}

void BM_KnnBuild(benchmark::State& state) {
  const PointCloud cloud = sample_surface(torus(), static_cast<std::size_t>(state.range(0)), 1);
  for (auto _ : state) benchmark::DoNotOptimize(KnnIndex(cloud));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_KnnBuild)->Arg(500)->Arg(100000);

void BM_KnnQuery(benchmark::State& state) {
  const KnnIndex index(sample_surface(torus(), static_cast<std::size_t>(state.range(0)), 1));
  const auto probes = sample_queries(PointCloud(index.points()), 1, 2);
  const auto k = static_cast<std::size_t>(state.range(1));
  std::vector<Neighbor> out;
  std::size_t i = 0;
  for (auto _ : state) {
    index.query(probes[i++ % probes.size()], k, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_KnnQuery)->Args({500, 50})->Args({100000, 1})->Args({100000, 50});

// One optimizer step's worth of second-order gradients: values, input
// gradients and the parameter gradient of a loss that uses both.
void BM_MlpSecondOrder(benchmark::State& state) {
  const MlpModel model = sdf_network(static_cast<std::size_t>(state.range(0)), 6);
  const auto batch = static_cast<Eigen::Index>(state.range(1));
  const MatrixX x = MatrixX::Random(3, batch);
  const LossHead head = [](const VectorX& v, const MatrixX& g) {
    LossHeadOutput out;
    out.loss = v.cwiseAbs().mean() + (g.colwise().norm().array() - 1.0).square().mean();
    out.d_value = v.cwiseSign() / static_cast<double>(v.size());
    const VectorX norms = g.colwise().norm();
    out.d_input_grad = g;
    for (Eigen::Index j = 0; j < g.cols(); ++j)
      out.d_input_grad.col(j) *= 2.0 * (norms[j] - 1.0) / (norms[j] * static_cast<double>(v.size()));
    return out;
  };
  for (auto _ : state) benchmark::DoNotOptimize(loss_param_grads(model, x, head, true));
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_MlpSecondOrder)->Args({64, 500})->Args({128, 1000})->Unit(benchmark::kMillisecond);

void BM_FitLossLearnedPrior(benchmark::State& state) {
  const PointCloud cloud = sample_surface(torus(), 500, 1);
  PriorConfig pc;
  PriorModel prior;
  prior.network = init_model(pc.architecture(), InitMode::uniform, 3);
  const LearnedSurfacePrior surface_prior(prior, cloud);
  const MlpModel sdf = sdf_network(64, 6);
  const auto q = sample_queries(cloud, 1, 4);
  MatrixX x(3, 500);
  for (Eigen::Index j = 0; j < x.cols(); ++j) x.col(j) = q[static_cast<std::size_t>(j)];
  for (auto _ : state) benchmark::DoNotOptimize(fit_loss_grads(sdf, surface_prior, x, 0.4, false));
  state.SetItemsProcessed(state.iterations() * x.cols());
}
BENCHMARK(BM_FitLossLearnedPrior)->Unit(benchmark::kMillisecond);

void BM_MarchingCubes(benchmark::State& state) {
  const auto res = static_cast<std::size_t>(state.range(0));
  const ScalarGrid grid = evaluate_grid([](const Point3& p) { return torus().signed_distance(p); },
                                        {Point3::Constant(-1), Point3::Constant(1)}, res);
  for (auto _ : state) benchmark::DoNotOptimize(marching_cubes(grid));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(grid.values.size()));
}
BENCHMARK(BM_MarchingCubes)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_EvaluateGrid(benchmark::State& state) {
  const MlpModel sdf = sdf_network(64, 6);
  const Bounds b{Point3::Constant(-1), Point3::Constant(1)};
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_grid(sdf, b, static_cast<std::size_t>(state.range(0))));
}
BENCHMARK(BM_EvaluateGrid)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
