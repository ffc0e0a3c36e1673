#include <random>

#include <benchmark/benchmark.h>

#include "gnndiff/autodiff.hpp"
#include "gnndiff/gldm.hpp"
#include "gnndiff/graph.hpp"

using namespace gnndiff;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g;
  Tensor t(std::move(shape));
  for (auto& v : t.storage()) v = g(rng);
  return t;
}

std::shared_ptr<const SparseMatrix> random_graph_operator(std::size_t n, std::size_t degree) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(n - 1));
  std::vector<std::vector<bool>> seen(n, std::vector<bool>(n, false));
  std::vector<Triplet> t;
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < degree; ++k) {
      const auto j = pick(rng);
      if (i == j || seen[i][j]) continue;
      seen[i][j] = seen[j][i] = true;
      t.push_back({i, j, 1.0f});
      t.push_back({j, i, 1.0f});
    }
  return std::make_shared<const SparseMatrix>(
      normalize_adjacency(SparseMatrix::from_triplets(n, n, std::move(t))));
}

}  // namespace

static void BM_Spmm(benchmark::State& state) {
  const auto a = random_graph_operator(2708, 2);
  const auto x = ad::constant(random_tensor({2708, static_cast<std::size_t>(state.range(0))}, 2));
  for (auto _ : state) benchmark::DoNotOptimize(ad::spmm(a, x));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(a->nnz()) * state.range(0));
}
BENCHMARK(BM_Spmm)->Arg(7)->Arg(64);

static void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = ad::constant(random_tensor({2708, n}, 3));
  const auto b = ad::constant(random_tensor({n, 64}, 4));
  for (auto _ : state) benchmark::DoNotOptimize(ad::matmul(a, b));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(1433);

static void BM_Conv1dBackward(benchmark::State& state) {
  const auto x = ad::parameter(random_tensor({10, 1, 456}, 5));
  const auto k = ad::parameter(random_tensor({64, 1, 3}, 6));
  for (auto _ : state) {
    const auto y = ad::sum(ad::conv1d(x, k, nullptr, 3));
    const std::vector<ad::Var> params{x, k};
    benchmark::DoNotOptimize(ad::gradients(y, params));
  }
}
BENCHMARK(BM_Conv1dBackward);

static void BM_DenoiserForward(benchmark::State& state) {
  ad::Rng rng(7);
  const Denoiser d = denoiser_init(912, rng);
  const auto z = ad::constant(random_tensor({static_cast<std::size_t>(state.range(0)), 912}, 8));
  const std::vector<int> t(static_cast<std::size_t>(state.range(0)), 500);
  const std::vector<float> c(912, 0.1f);
  for (auto _ : state) benchmark::DoNotOptimize(denoiser_forward(d, z, t, c));
}
BENCHMARK(BM_DenoiserForward)->Arg(1)->Arg(100);
BENCHMARK_MAIN();
