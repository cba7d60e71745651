#include <gtest/gtest.h>
#include <torch/torch.h>

#include <limits>

#include "uniwetok/errors.hpp"
#include "uniwetok/objective.hpp"

using namespace uniwetok;

namespace {

torch::Tensor scalar(double v) { return torch::tensor(v, torch::kFloat64); }

}  // namespace

TEST(LossWeights, SigLuForbidsCommitment) {
  LossWeights w;
  w.alpha = 0.25;
  EXPECT_THROW(w.validate(true), ConfigError);
  EXPECT_NO_THROW(w.validate(false));
  w.alpha = 0.0;
  EXPECT_NO_THROW(w.validate(true));
  w.beta = -1.0;
  EXPECT_THROW(w.validate(true), ConfigError);
}

TEST(TotalLoss, WeightedSumAndReport) {
  LossWeights w{0.5, 0.1, 0.2, 0.3, 2.0, 4.0, 0.5, 0};
  LossTerms t;
  t.recon = scalar(1.0);
  t.commit = scalar(2.0);
  t.perceptual = scalar(3.0);
  t.gan_g = scalar(-1.0);
  t.gan_d = scalar(7.0);
  t.token_entropy = scalar(0.5);
  t.codebook_entropy = scalar(-1.5);
  t.ppd_pre = scalar(0.25);
  t.ppd_post = scalar(0.5);
  t.gap = scalar(0.125);
  auto out = total_loss(t, w, 12);
  const double want = 1.0 + 0.5 * 2.0 + 0.1 * 3.0 + 0.2 * -1.0 + 0.3 * (0.5 - 1.5) +
                      2.0 * (0.25 + 0.5 * 0.5) + 4.0 * 0.125;
  EXPECT_NEAR(out.total.item<double>(), want, 1e-12);
  EXPECT_NEAR(out.report.total, want, 1e-12);
  EXPECT_NEAR(out.report.reconstitute(w), want, 1e-12);
  EXPECT_EQ(out.report.terms.at("gan_d"), 7.0);
  EXPECT_EQ(out.report.to_line().rfind("step=12 total=", 0), 0u);
}

TEST(TotalLoss, InactiveTermsReportZero) {
  LossTerms t;
  t.recon = scalar(0.5);
  auto out = total_loss(t, LossWeights{}, 0);
  EXPECT_EQ(out.report.terms.at("gap"), 0.0);
  EXPECT_EQ(out.report.terms.size(), loss_term_names().size());
}

TEST(TotalLoss, NonFiniteTermNamesTheTerm) {
  LossTerms t;
  t.recon = scalar(0.5);
  t.gap = scalar(std::numeric_limits<double>::quiet_NaN());
  LossWeights w;
  w.mu = 1.0;
  try {
    total_loss(t, w, 33);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_EQ(e.term(), "gap");
    EXPECT_EQ(e.step(), 33);
  }
}

TEST(Reconstruction, ShapeMismatch) {
  EXPECT_THROW(reconstruction_loss(torch::zeros({1, 4, 4, 3}), torch::zeros({1, 4, 5, 3})),
               ValidationError);
  EXPECT_NEAR(reconstruction_loss(torch::zeros({1, 2, 2, 3}), torch::ones({1, 2, 2, 3})).item<float>(),
              1.0, 1e-7);
}

TEST(Perceptual, ZeroOnIdenticalAndDeterministic) {
  PerceptualNet a(7), b(7);
  auto x = torch::rand({2, 16, 16, 3}) * 2 - 1;
  auto y = torch::rand({2, 16, 16, 3}) * 2 - 1;
  EXPECT_NEAR(perceptual_loss(x, x, &a).item<float>(), 0.0, 1e-7);
  EXPECT_GT(perceptual_loss(x, y, &a).item<float>(), 0.0);
  EXPECT_TRUE(torch::equal(a.descriptor(x), b.descriptor(x)));
  EXPECT_THROW(perceptual_loss(x, y, nullptr), ConfigError);
}

TEST(Hinge, GatedByStartStepAndValues) {
  auto real = torch::tensor({2.0, 0.5}), fake = torch::tensor({-0.5, 1.0});
  auto before = hinge_losses(real, fake, 9, 10);
  EXPECT_EQ(before.generator.item<float>(), 0.0f);
  EXPECT_EQ(before.discriminator.item<float>(), 0.0f);
  auto after = hinge_losses(real, fake, 10, 10);
  EXPECT_NEAR(after.generator.item<float>(), -0.25, 1e-7);
  EXPECT_NEAR(after.discriminator.item<float>(), (0.0 + 0.5) / 2 + (0.5 + 2.0) / 2, 1e-6);
}

TEST(Discriminator, PatchLogitShape) {
  PatchDiscriminator d(8);
  auto out = d->forward(torch::zeros({2, 32, 32, 3}));
  EXPECT_EQ(out.sizes(), (std::vector<int64_t>{2, 1, 8, 8}));
}
