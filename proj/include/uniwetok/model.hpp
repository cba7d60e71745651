#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "uniwetok/backbone.hpp"
#include "uniwetok/config.hpp"
#include "uniwetok/generative_prior.hpp"
#include "uniwetok/objective.hpp"
#include "uniwetok/quantizer.hpp"
#include "uniwetok/semantic_distill.hpp"

namespace uniwetok {

using NamedTensors = std::vector<std::pair<std::string, torch::Tensor>>;

struct BundleOptions {
  bool pool_heads = true;     // built when a distillation arm is on
  bool prior = true;          // built when a prior model is named
  bool discriminator = false;
  bool perceptual = false;
  bool load_teacher = true;   // false for construction-only checks
};

// Builds the teacher named in `spec`. Throws ConfigError or DataError.
std::shared_ptr<Teacher> make_teacher(const TeacherSpec& spec);

// Everything one training run owns: encoder, decoder, optional pool heads,
// prior, discriminator, teacher and perceptual net.
class ModelBundle {
 public:
  ModelBundle(const ModelConfig& config, const BundleOptions& options);

  const ModelConfig& config() const { return config_; }

  Encoder encoder{nullptr};
  Decoder decoder{nullptr};
  PoolHead pre_head{nullptr};
  PoolHead post_head{nullptr};
  Prior prior{nullptr};
  PatchDiscriminator discriminator{nullptr};
  std::shared_ptr<Teacher> teacher;
  std::shared_ptr<PerceptualNet> perceptual;

  // Parameters updated by the main optimizer, prefixed "encoder.", "decoder.",
  // "pre_head.", "post_head.", "prior.".
  NamedTensors generator_parameters() const;
  NamedTensors discriminator_parameters() const;
  // Encoder + decoder only (the tensors EMA tracks and inference needs).
  NamedTensors autoencoder_parameters() const;

  void train(bool on);

  // images [B, H, W, 3] -> pre-quantization latent [B, h, w, g*d'].
  torch::Tensor encode(const torch::Tensor& images);
  BinaryCode tokenize(const torch::Tensor& images);
  // ids [B, h, w, g] -> images [B, H, W, 3].
  torch::Tensor detokenize(const torch::Tensor& ids);
  torch::Tensor reconstruct(const torch::Tensor& images);

  struct ParameterCounts {
    int64_t encoder = 0, decoder = 0, pre_head = 0, post_head = 0, prior = 0, discriminator = 0;
    int64_t tokenizer() const { return encoder + decoder; }
  };
  ParameterCounts parameter_counts() const;

 private:
  ModelConfig config_;
};

// Swaps EMA shadows into the autoencoder for the lifetime of the guard.
class EmaSwap {
 public:
  EmaSwap(ModelBundle& bundle, const std::map<std::string, torch::Tensor>& shadow);
  ~EmaSwap();
  EmaSwap(const EmaSwap&) = delete;
  EmaSwap& operator=(const EmaSwap&) = delete;

 private:
  NamedTensors params_;
  std::vector<torch::Tensor> saved_;
};

}  // namespace uniwetok
