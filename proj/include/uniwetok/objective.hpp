#pragma once

// Composite tokenizer objective:
//   total = recon + alpha*commit + beta*perceptual + gamma*gan_g
//         + delta*(token_entropy + codebook_entropy)
//         + theta*(ppd_pre + eta*ppd_post) + mu*gap

#include <torch/torch.h>

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "uniwetok/layers.hpp"

namespace uniwetok {

struct LossWeights {
  double alpha = 0.0;  // commitment
  double beta = 0.0;   // perceptual
  double gamma = 0.0;  // adversarial (generator side)
  double delta = 0.0;  // token + codebook entropy
  double theta = 0.0;  // pre/post distillation
  double mu = 0.0;     // generative-aware prior
  double eta = 1.0;    // post weight inside the distillation term
  int64_t disc_start_step = 1000;

  // Throws ConfigError; with SigLu on, alpha must be 0 because the token
  // entropy term takes over the commitment role.
  void validate(bool siglu_enabled) const;
};

// Unweighted term values, in report order.
inline const std::vector<std::string>& loss_term_names() {
  static const std::vector<std::string> names{
      "recon",         "commit",           "perceptual", "gan_g",    "gan_d",
      "token_entropy", "codebook_entropy", "ppd_pre",    "ppd_post", "gap"};
  return names;
}

struct LossReport {
  int64_t step = 0;
  double total = 0.0;
  std::map<std::string, double> terms;

  // "step=<n> total=<x> recon=<x> ..." in loss_term_names() order.
  std::string to_line() const;
  // Recomputes the weighted sum from the unweighted terms.
  double reconstitute(const LossWeights& weights) const;
};

// Term tensors for one step. Undefined tensors count as inactive.
struct LossTerms {
  torch::Tensor recon;
  torch::Tensor commit;
  torch::Tensor perceptual;
  torch::Tensor gan_g;
  torch::Tensor gan_d;  // reported only; the discriminator optimizes it separately
  torch::Tensor token_entropy;
  torch::Tensor codebook_entropy;
  torch::Tensor ppd_pre;
  torch::Tensor ppd_post;
  torch::Tensor gap;
};

struct AssembledLoss {
  torch::Tensor total;
  LossReport report;
};

// Throws TrainingError naming the first non-finite term and the step.
AssembledLoss total_loss(const LossTerms& terms, const LossWeights& weights, int64_t step);

// Pixel MSE. Throws ValidationError on a shape mismatch.
torch::Tensor reconstruction_loss(const torch::Tensor& images, const torch::Tensor& recon);

// Frozen seeded conv feature stack standing in for a learned perceptual metric.
class PerceptualNet {
 public:
  explicit PerceptualNet(uint64_t seed = 1234);
  // images [B, H, W, 3] -> per-layer NCHW feature maps.
  std::vector<torch::Tensor> features(const torch::Tensor& images) const;
  // [B, H, W, 3] -> [B, F] pooled descriptor (used by the Frechet proxy).
  torch::Tensor descriptor(const torch::Tensor& images) const;

 private:
  std::vector<torch::Tensor> weights_;
};

// Mean squared distance between channel-normalized features, averaged over
// layers. Throws ConfigError when `net` is null.
torch::Tensor perceptual_loss(const torch::Tensor& images, const torch::Tensor& recon,
                              const PerceptualNet* net);

// Four strided conv layers producing a patch logit map.
class PatchDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit PatchDiscriminatorImpl(int base_channels = 32);
  // [B, H, W, 3] -> [B, 1, h, w] logits.
  torch::Tensor forward(const torch::Tensor& images);

 private:
  nn::Conv2d c1{nullptr}, c2{nullptr}, c3{nullptr}, c4{nullptr};
};
TORCH_MODULE(PatchDiscriminator);

struct AdversarialTerms {
  torch::Tensor generator;      // -mean(D(recon))
  torch::Tensor discriminator;  // mean(relu(1 - D(real))) + mean(relu(1 + D(recon)))
};

// Hinge losses from precomputed logits; both zero while step < start_step.
AdversarialTerms hinge_losses(const torch::Tensor& real_logits, const torch::Tensor& fake_logits,
                              int64_t step, int64_t start_step);

// The discriminator term sees a detached reconstruction.
AdversarialTerms adversarial_losses(const torch::Tensor& images, const torch::Tensor& recon,
                                    PatchDiscriminator& discriminator, int64_t step,
                                    int64_t start_step);

}  // namespace uniwetok
