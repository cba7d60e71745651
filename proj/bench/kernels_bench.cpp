// Serial reference vs OpenMP kernels. Set OMP_NUM_THREADS to vary the pool.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "uniwetok/kernels.hpp"

namespace k = uniwetok::kernels;

namespace {

// A batch of 32 images at 32x32 with 4x downsampling, g = 4, d' = 8.
constexpr int kPositions = 32 * 8 * 8;
constexpr int kGroups = 4;
constexpr int kBits = 8;

std::vector<float> latent(size_t n) {
  std::mt19937 rng(7);
  std::uniform_real_distribution<float> dist(-0.999f, 0.999f);
  std::vector<float> u(n);
  for (auto& x : u) x = dist(rng);
  return u;
}

template <auto Fn>
void token_entropy(benchmark::State& state) {
  const auto u = latent(static_cast<size_t>(kPositions) * kGroups * kBits);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(std::span<const float>(u), kBits, k::BitProbability{}));
  state.SetItemsProcessed(state.iterations() * kPositions * kGroups);
}

template <auto Fn>
void codebook_entropy(benchmark::State& state) {
  const auto u = latent(static_cast<size_t>(kPositions) * kGroups * kBits);
  for (auto _ : state) {
    benchmark::DoNotOptimize(Fn(std::span<const float>(u), kGroups, kBits, k::BitProbability{}));
  }
  state.SetItemsProcessed(state.iterations() * kPositions * kGroups);
}

template <auto Fn>
void usage(benchmark::State& state) {
  // 1k evaluation images worth of ids.
  const size_t n = static_cast<size_t>(1000) * 64 * kGroups;
  std::mt19937_64 rng(3);
  std::vector<int64_t> ids(n);
  for (auto& id : ids) id = static_cast<int64_t>(rng() % (1u << kBits));
  std::vector<uint8_t> seen(static_cast<size_t>(kGroups) << kBits);
  for (auto _ : state) {
    Fn(ids, kGroups, kBits, seen);
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n));
}

template <auto Fn>
void ssim(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> a(static_cast<size_t>(side) * side), b(a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    a[i] = dist(rng);
    b[i] = 0.8 * a[i] + 0.2 * dist(rng);
  }
  for (auto _ : state) benchmark::DoNotOptimize(Fn(a, b, side, side, k::SsimParams{}));
  state.SetItemsProcessed(state.iterations() * side * side);
}

BENCHMARK(token_entropy<k::reference::token_entropy_forward<float>>)->Name("token_entropy/reference");
BENCHMARK(token_entropy<k::parallel::token_entropy_forward<float>>)->Name("token_entropy/parallel");
BENCHMARK(codebook_entropy<k::reference::codebook_entropy_forward<float>>)->Name("codebook_entropy/reference");
BENCHMARK(codebook_entropy<k::parallel::codebook_entropy_forward<float>>)->Name("codebook_entropy/parallel");
BENCHMARK(usage<k::reference::mark_usage>)->Name("mark_usage/reference");
BENCHMARK(usage<k::parallel::mark_usage>)->Name("mark_usage/parallel");
BENCHMARK(ssim<k::reference::ssim_mean>)->Name("ssim/reference")->Arg(64)->Arg(256);
BENCHMARK(ssim<k::parallel::ssim_mean>)->Name("ssim/parallel")->Arg(64)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
