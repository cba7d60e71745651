#pragma once

// Generative-aware prior: a tiny causal next-token diffusion model trained on
// the raster-flattened straight-through latent.
//
// Corruption is the linear path z_t = (1 - t) * x + t * eps with the clean
// token as the prediction target. The model sees [Query, x[:-1]] as its
// causal context, plus z_t at each position and a timestep embedding.

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "uniwetok/layers.hpp"

namespace uniwetok {

struct PriorConfig {
  int layers = 2;
  int width = 128;
  int heads = 4;
  int timestep_embedding_dim = 128;
  bool query_token = true;

  void validate() const;
};

// [B, h, w, d] -> [B, h*w, d], row-major raster order.
torch::Tensor flatten_tokens(const torch::Tensor& grid);
// Throws ValidationError when the length is not h*w.
torch::Tensor unflatten_tokens(const torch::Tensor& sequence, int64_t height, int64_t width);

// Sinusoidal embedding of t in [0, 1]: [B] -> [B, dim].
torch::Tensor timestep_embedding(const torch::Tensor& t, int64_t dim);

class PriorImpl : public torch::nn::Module {
 public:
  PriorImpl(const PriorConfig& config, int token_width);

  // targets/noise [B, L, d], t [B]. Returns one prediction per supervised
  // position: [B, L, d] with the query token, [B, L-1, d] (targets 1..L-1)
  // without. Throws ValidationError for t outside [0, 1].
  torch::Tensor forward(const torch::Tensor& targets, const torch::Tensor& noise,
                        const torch::Tensor& t);

  // Predictions given an explicit causal context. `context` holds the
  // already-known tokens, `noised` the z_t channel for every output slot.
  // With the query token, outputs = context length + 1.
  torch::Tensor predict(const torch::Tensor& context, const torch::Tensor& noised,
                        const torch::Tensor& t);

  const PriorConfig& config() const { return config_; }
  int token_width() const { return token_width_; }

 private:
  PriorConfig config_;
  int token_width_;
  torch::Tensor query;
  nn::Linear token_in{nullptr}, noise_in{nullptr}, time1{nullptr}, time2{nullptr};
  torch::nn::ModuleList blocks;
  nn::LayerNorm norm{nullptr};
  nn::Linear head{nullptr};
};
TORCH_MODULE(Prior);

struct GapLoss {
  torch::Tensor value;         // scalar MSE over supervised positions
  torch::Tensor per_position;  // [L], 0 where unsupervised
  torch::Tensor supervised;    // [L] bool
};

// MSE between predictions and targets (targets carry gradients back into
// the tokenizer through the straight-through path).
GapLoss gap_loss(const torch::Tensor& targets, Prior& prior, const torch::Tensor& noise,
                 const torch::Tensor& t);

// Draws eps ~ N(0, I) and one t ~ U[0, 1] per batch element from `generator`.
GapLoss gap_loss(const torch::Tensor& targets, Prior& prior, at::Generator& generator);

struct ProbeBudget {
  int steps = 300;
  int batch_size = 16;
  double learning_rate = 1e-3;
  int eval_every = 50;
  int validation_draws = 4;
  uint64_t seed = 0;
};

struct ProbeRecord {
  int step = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct ProbeCurve {
  std::vector<ProbeRecord> records;
  double final_val_loss() const { return records.empty() ? 0.0 : records.back().val_loss; }
};

// Trains a fresh prior on frozen token sequences [N, L, d] and reports
// train / validation MSE. Deterministic for a fixed budget.seed. Throws
// ValidationError on an empty training or validation set.
ProbeCurve probe_generability(const torch::Tensor& train_tokens, const torch::Tensor& val_tokens,
                              const PriorConfig& config, const ProbeBudget& budget);

// "step=<n> train_loss=<x> val_loss=<y>" per line.
void write_probe_curve(const ProbeCurve& curve, const std::filesystem::path& path);

// Position-by-position generation; each position is denoised from pure noise
// in `steps` uniform steps and snapped to {-1, +1}. Throws ValidationError
// for steps < 1.
torch::Tensor sample_sequence(Prior& prior, int64_t batch, int64_t length, int steps,
                              at::Generator& generator);

}  // namespace uniwetok
