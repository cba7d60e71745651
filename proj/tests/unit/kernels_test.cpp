#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "uniwetok/kernels.hpp"

namespace k = uniwetok::kernels;

namespace {

std::vector<double> uniform(size_t n, uint64_t seed, double lo = -0.95, double hi = 0.95) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

}  // namespace

class KernelAgreement : public ::testing::TestWithParam<bool> {};

TEST_P(KernelAgreement, TokenEntropy) {
  const k::BitProbability prob{GetParam(), 0.8};
  const int d = 6;
  auto u = uniform(d * 513, 1);
  const double ref = k::reference::token_entropy_forward<double>(u, d, prob);
  const double par = k::parallel::token_entropy_forward<double>(u, d, prob);
  EXPECT_NEAR(ref, par, 1e-12 * std::abs(ref));
  std::vector<double> g_ref(u.size()), g_par(u.size());
  k::reference::token_entropy_backward<double>(u, d, prob, 0.7, g_ref);
  k::parallel::token_entropy_backward<double>(u, d, prob, 0.7, g_par);
  for (size_t i = 0; i < u.size(); ++i) ASSERT_NEAR(g_ref[i], g_par[i], 1e-14) << i;
}

TEST_P(KernelAgreement, CodebookEntropy) {
  const k::BitProbability prob{GetParam(), 1.3};
  const int g = 3, d = 5;
  auto u = uniform(static_cast<size_t>(g) * d * 97, 2);
  const double ref = k::reference::codebook_entropy_forward<double>(u, g, d, prob);
  const double par = k::parallel::codebook_entropy_forward<double>(u, g, d, prob);
  EXPECT_NEAR(ref, par, 1e-11 * std::abs(ref));
  std::vector<double> g_ref(u.size()), g_par(u.size());
  k::reference::codebook_entropy_backward<double>(u, g, d, prob, -1.1, g_ref);
  k::parallel::codebook_entropy_backward<double>(u, g, d, prob, -1.1, g_par);
  for (size_t i = 0; i < u.size(); ++i) ASSERT_NEAR(g_ref[i], g_par[i], 1e-12) << i;
}

INSTANTIATE_TEST_SUITE_P(Probability, KernelAgreement, ::testing::Values(true, false));

TEST(Kernels, SignPackAgrees) {
  const int d = 8;
  auto u = uniform(d * 300, 3, -1.0, 1.0);
  u[5] = 0.0;
  std::vector<double> s_ref(u.size()), s_par(u.size());
  std::vector<int64_t> i_ref(u.size() / d), i_par(u.size() / d);
  k::reference::sign_pack<double>(u, d, s_ref, i_ref);
  k::parallel::sign_pack<double>(u, d, s_par, i_par);
  EXPECT_EQ(s_ref, s_par);
  EXPECT_EQ(i_ref, i_par);
  EXPECT_EQ(s_ref[5], 1.0);
}

TEST(Kernels, UsageAgrees) {
  const int g = 4, d = 6;
  std::mt19937_64 rng(4);
  std::vector<int64_t> ids(g * 200);
  for (auto& id : ids) id = static_cast<int64_t>(rng() % 64);
  std::vector<uint8_t> a(g << d), b(g << d);
  k::reference::mark_usage(ids, g, d, a);
  k::parallel::mark_usage(ids, g, d, b);
  EXPECT_EQ(a, b);
}

TEST(Kernels, SsimAgrees) {
  const int h = 37, w = 29;
  auto a = uniform(h * w, 5, -1, 1);
  auto b = a;
  auto noise = uniform(h * w, 6, -0.2, 0.2);
  for (size_t i = 0; i < b.size(); ++i) b[i] += noise[i];
  const k::SsimParams p;
  const double ref = k::reference::ssim_mean(a, b, h, w, p);
  const double par = k::parallel::ssim_mean(a, b, h, w, p);
  EXPECT_NEAR(ref, par, 1e-12);
  EXPECT_LT(ref, 1.0);
  EXPECT_NEAR(k::parallel::ssim_mean(a, a, h, w, p), 1.0, 1e-12);
}

TEST(Kernels, FloatAndDoubleEntropyAgree) {
  const k::BitProbability prob{true, 1.0};
  auto u = uniform(8 * 64, 7);
  std::vector<float> f(u.begin(), u.end());
  std::vector<double> back(f.begin(), f.end());
  EXPECT_NEAR(k::parallel::token_entropy_forward<float>(f, 8, prob),
              k::parallel::token_entropy_forward<double>(back, 8, prob), 1e-9);
}
