#pragma once

// Hybrid convolutional / attention encoder and mirrored decoder.
//
// Encoder: conv_in -> per level {num_res_blocks residual blocks, downsample
// to the next level's width} -> bottleneck transformer stack over the h*w
// tokens (2-D sinusoidal positions) -> optional 2x-wide bottleneck
// projection -> linear head to g*d' -> SigLu.
// Decoder mirrors it with nearest-neighbour upsampling.
//
// Images cross the public API as [B, H, W, 3] in [-1, 1]; latents as
// [B, h, w, g*d'] (channels last).

#include <torch/torch.h>

#include <string>
#include <vector>

#include "uniwetok/layers.hpp"

namespace uniwetok {

struct BackboneConfig {
  int base_channel = 32;
  std::vector<int> channel_mult{1, 2, 4};
  int num_res_blocks = 2;
  int num_attn_blocks = 4;
  bool bottleneck_double = true;
  // false: legacy order, strided conv at constant width then a 1x1 expansion.
  bool concurrent_downsample = true;
  bool siglu = true;
  int image_channels = 3;
  int latent_width = 32;  // g * d'
  int attn_heads = 0;     // 0: width / 64, at least 1

  int downsample_factor() const { return 1 << (static_cast<int>(channel_mult.size()) - 1); }
  int bottleneck_width() const { return base_channel * channel_mult.back(); }
  int heads() const;
  // Throws ConfigError.
  void validate() const;
};

class ResBlockImpl : public torch::nn::Module {
 public:
  ResBlockImpl(int64_t in_channels, int64_t out_channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  nn::GroupNorm norm1{nullptr}, norm2{nullptr};
  nn::Conv2d conv1{nullptr}, conv2{nullptr}, shortcut{nullptr};
};
TORCH_MODULE(ResBlock);

// Halves the spatial size and moves to out_channels. Concurrent mode is a
// single 3x3 stride-2 convolution; legacy mode downsamples at constant width
// and expands with a 1x1 convolution afterwards.
class DownsampleBlockImpl : public torch::nn::Module {
 public:
  DownsampleBlockImpl(int64_t in_channels, int64_t out_channels, bool concurrent = true);
  // Throws ConfigError on odd spatial dims.
  torch::Tensor forward(const torch::Tensor& x);

 private:
  nn::Conv2d down{nullptr}, expand{nullptr};
};
TORCH_MODULE(DownsampleBlock);

class UpsampleBlockImpl : public torch::nn::Module {
 public:
  UpsampleBlockImpl(int64_t in_channels, int64_t out_channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  nn::Conv2d conv{nullptr};
};
TORCH_MODULE(UpsampleBlock);

// [h*w, dim] 2-D sinusoidal table: first half of the channels encode the row,
// second half the column. dim must be divisible by 4.
torch::Tensor position_encoding_2d(int64_t height, int64_t width, int64_t dim,
                                   const torch::TensorOptions& options);

class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(const BackboneConfig& config);
  // [B, H, W, 3] -> [B, H/f, W/f, latent_width]. Throws ValidationError
  // naming the dimension that is not divisible by the downsample factor.
  torch::Tensor forward(const torch::Tensor& images);

  const BackboneConfig& config() const { return config_; }

 private:
  BackboneConfig config_;
  nn::Conv2d conv_in{nullptr};
  torch::nn::ModuleList levels;
  torch::nn::ModuleList attention;
  nn::LayerNorm norm_out{nullptr};
  nn::Linear widen{nullptr}, head{nullptr};
};
TORCH_MODULE(Encoder);

class DecoderImpl : public torch::nn::Module {
 public:
  explicit DecoderImpl(const BackboneConfig& config);
  // [B, h, w, latent_width] -> [B, h*f, w*f, 3], clamped to [-1, 1].
  torch::Tensor forward(const torch::Tensor& latent);

  const BackboneConfig& config() const { return config_; }

 private:
  BackboneConfig config_;
  nn::Linear head_in{nullptr}, narrow{nullptr};
  torch::nn::ModuleList attention;
  torch::nn::ModuleList levels;
  nn::GroupNorm norm_out{nullptr};
  nn::Conv2d conv_out{nullptr};
};
TORCH_MODULE(Decoder);

struct BackboneSummary {
  int downsample_factor = 1;
  int levels = 0;
  int64_t encoder_parameters = 0;
  int64_t decoder_parameters = 0;
  int64_t attention_parameters = 0;  // both sides
  int64_t residual_parameters = 0;   // both sides
  std::string arm;                   // "hybrid", "cnn-only", "transformer-only"
};

// Builds encoder and decoder on the meta device and counts parameters.
BackboneSummary summarize(const BackboneConfig& config);

// "hybrid" / "cnn-only" / "transformer-only" / "plain".
std::string backbone_arm(const BackboneConfig& config);

}  // namespace uniwetok
