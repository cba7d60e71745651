#include <gtest/gtest.h>
#include <torch/torch.h>

#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "uniwetok/errors.hpp"
#include "uniwetok/quantizer.hpp"

using namespace uniwetok;

namespace {

QuantizerConfig toy(int g, int d, bool siglu = true) {
  QuantizerConfig q;
  q.groups = g;
  q.bits_per_group = d;
  q.siglu = siglu;
  return q;
}

std::vector<double> to_vector(const torch::Tensor& t) {
  auto c = t.to(torch::kFloat64).contiguous();
  return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

}  // namespace

TEST(Quantizer, SignOfZeroIsPositive) {
  auto code = quantize(torch::zeros({1, 1, 1, 4}, torch::kFloat64));
  EXPECT_TRUE(torch::all(code.signs == 1).item<bool>());
  EXPECT_EQ(code.ids.item<int64_t>(), 15);
}

TEST(Quantizer, IdsAreLeastSignificantBitFirst) {
  auto u = torch::tensor({0.3, -0.2, -0.9, 0.1}, torch::kFloat64).view({1, 1, 4});
  EXPECT_EQ(quantize(u).ids.item<int64_t>(), 1 + 8);
}

TEST(Quantizer, ExhaustiveRoundTripAtEightBits) {
  const auto q = toy(1, 8);
  auto ids = torch::arange(256, torch::kInt64).view({256, 1});
  auto code = indices_to_codes(ids, q);
  ASSERT_EQ(code.signs.sizes(), (std::vector<int64_t>{256, 1, 8}));
  EXPECT_TRUE(torch::equal(codes_to_indices(code.signs), ids));
  EXPECT_TRUE(torch::equal(quantize(code.signs).ids, ids));
  for (int64_t i = 0; i < 256; ++i) {
    EXPECT_EQ(oracle::code_id(to_vector(code.signs[i][0])), i);
  }
}

TEST(Quantizer, RejectsOutOfRangeIds) {
  const auto q = toy(2, 3);
  EXPECT_THROW(indices_to_codes(torch::tensor({{0, 8}}, torch::kInt64), q), ValidationError);
  EXPECT_THROW(indices_to_codes(torch::tensor({{-1, 0}}, torch::kInt64), q), ValidationError);
}

TEST(Quantizer, GroupReshapeChecksWidth) {
  const auto q = toy(2, 4);
  auto flat = torch::randn({2, 3, 3, 8});
  auto grouped = group_reshape(flat, q);
  EXPECT_EQ(grouped.sizes(), (std::vector<int64_t>{2, 3, 3, 2, 4}));
  EXPECT_TRUE(torch::equal(ungroup(grouped), flat));
  EXPECT_THROW(group_reshape(torch::randn({1, 7}), q), ConfigError);
}

TEST(Quantizer, StraightThroughForwardIsSignBitExact) {
  torch::manual_seed(3);
  auto u = torch::rand({4, 2, 2, 3, 5}, torch::kFloat32) * 2 - 1;
  u.requires_grad_(true);
  auto code = quantize(u);
  auto st = straight_through(u, code);
  EXPECT_TRUE(torch::equal(st, code.signs));
  st.sum().backward();
  EXPECT_TRUE(torch::allclose(u.grad(), torch::ones_like(u)));
}

TEST(Quantizer, DetachedStraightThroughBlocksGradient) {
  auto u = torch::randn({2, 3}, torch::kFloat64).requires_grad_(true);
  auto st = straight_through(u, quantize(u), false);
  EXPECT_FALSE(st.requires_grad());
}

TEST(Quantizer, TokenEntropyMatchesEnumeration) {
  torch::manual_seed(11);
  for (bool siglu : {true, false}) {
    auto q = toy(1, 2, siglu);
    q.entropy_temperature = 0.7;
    auto u = (torch::rand({3, 2, 2, 1, 2}, torch::kFloat64) * 1.8 - 0.9);
    const double got = token_entropy_loss(u, q).item<double>();
    const double want = oracle::token_entropy(to_vector(u), 1, 2, siglu, 0.7);
    EXPECT_NEAR(got, want, 1e-10) << "siglu=" << siglu;
  }
}

TEST(Quantizer, CodebookEntropyMatchesEnumeration) {
  torch::manual_seed(12);
  for (bool siglu : {true, false}) {
    auto q = toy(1, 2, siglu);
    auto u = (torch::rand({5, 2, 3, 1, 2}, torch::kFloat64) * 1.8 - 0.9);
    const double got = codebook_entropy_loss(u, q).item<double>();
    const double want = oracle::codebook_entropy(to_vector(u), 1, 2, siglu, 1.0);
    EXPECT_NEAR(got, want, 1e-10) << "siglu=" << siglu;
  }
}

TEST(Quantizer, EntropiesMatchEnumerationForSeveralGroups) {
  torch::manual_seed(13);
  auto q = toy(3, 3);
  auto u = torch::rand({2, 2, 2, 3, 3}, torch::kFloat64) * 1.6 - 0.8;
  EXPECT_NEAR(token_entropy_loss(u, q).item<double>(), oracle::token_entropy(to_vector(u), 3, 3), 1e-10);
  EXPECT_NEAR(codebook_entropy_loss(u, q).item<double>(), oracle::codebook_entropy(to_vector(u), 3, 3),
              1e-10);
}

TEST(Quantizer, EntropyRanges) {
  const auto q = toy(2, 4);
  auto undecided = torch::zeros({1, 2, 2, 2, 4}, torch::kFloat64);
  EXPECT_NEAR(token_entropy_loss(undecided, q).item<double>(), 4 * std::log(2.0), 1e-9);
  EXPECT_NEAR(codebook_entropy_loss(undecided, q).item<double>(), -4 * std::log(2.0), 1e-9);
  auto decided = torch::ones({1, 2, 2, 2, 4}, torch::kFloat64) * 0.999999;
  EXPECT_LT(token_entropy_loss(decided, q).item<double>(), 1e-4);
  EXPECT_GT(codebook_entropy_loss(decided, q).item<double>(), -1e-4);
}

TEST(Quantizer, CommitmentIsMeanSquaredDistanceToSigns) {
  auto u = torch::tensor({0.5, -0.25, 0.0, -1.0}, torch::kFloat64).view({1, 4});
  auto code = quantize(u);
  const double want = (0.25 + 0.5625 + 1.0 + 0.0) / 4.0;
  EXPECT_NEAR(commitment_loss(u, code).item<double>(), want, 1e-15);
}

TEST(SigLu, RangeSymmetryAndSpotValues) {
  EXPECT_NEAR(siglu(std::log(3.0)), -0.5, 1e-15);
  EXPECT_DOUBLE_EQ(siglu(0.0), 0.0);
  for (double x : {1e-3, 0.3, 1.0, 5.0, 30.0, 1e4}) {
    EXPECT_NEAR(siglu(x), -siglu(-x), 1e-12);
    EXPECT_GT(siglu(x), -1.0);
    EXPECT_LT(siglu(-x), 1.0);
  }
  auto big = torch::tensor({-1e4, -50.0, 50.0, 1e4}, torch::kFloat32);
  auto s = siglu(big);
  EXPECT_TRUE(torch::isfinite(s).all().item<bool>());
  EXPECT_TRUE((s.abs() < 1).all().item<bool>());
}

TEST(SigLu, TensorMatchesScalarAndIsMonotoneDecreasing) {
  auto x = torch::linspace(-20, 20, 401, torch::kFloat64);
  auto s = siglu(x);
  for (int64_t i = 0; i < 401; i += 40) {
    EXPECT_NEAR(s[i].item<double>(), siglu(x[i].item<double>()), 1e-15);
  }
  EXPECT_TRUE((s.slice(0, 1) <= s.slice(0, 0, -1)).all().item<bool>());
}

TEST(CodebookUsage, CountsDistinctIdsPerGroup) {
  const auto q = toy(2, 2);
  CodebookUsageCounter counter(q);
  counter.add(torch::tensor({{0, 1}, {1, 1}, {2, 1}}, torch::kInt64));
  auto u = counter.result();
  ASSERT_EQ(u.per_group.size(), 2u);
  EXPECT_DOUBLE_EQ(u.per_group[0], 0.75);
  EXPECT_DOUBLE_EQ(u.per_group[1], 0.25);
  EXPECT_DOUBLE_EQ(u.overall, 0.5);
  EXPECT_EQ(u.positions_seen, 3);
  EXPECT_THROW(CodebookUsageCounter(q).result(), ValidationError);
}

TEST(CodebookUsage, NeverExceedsPositionBound) {
  const auto q = toy(3, 6);
  torch::manual_seed(5);
  for (int n : {1, 7, 40, 500}) {
    CodebookUsageCounter counter(q);
    counter.add(torch::randint(0, 64, {n, 3}, torch::kInt64));
    for (double v : counter.result().per_group) {
      EXPECT_LE(v, std::min(1.0, n / 64.0) + 1e-12);
    }
  }
}
