#include "uniwetok/backbone.hpp"

#include <cmath>
#include <sstream>

#include "uniwetok/errors.hpp"
#include "uniwetok/quantizer.hpp"

namespace uniwetok {

int BackboneConfig::heads() const {
  if (attn_heads > 0) return attn_heads;
  return std::max(1, bottleneck_width() / 64);
}

void BackboneConfig::validate() const {
  if (channel_mult.empty()) throw ConfigError("channel_mult must list at least one level");
  if (base_channel < 1) throw ConfigError("channel must be positive");
  for (int m : channel_mult) {
    if (m < 1) throw ConfigError("channel_mult entries must be positive");
  }
  if (num_res_blocks < 0) throw ConfigError("num_res_blocks must be >= 0");
  if (num_attn_blocks < 0) throw ConfigError("num_attn_blocks must be >= 0");
  if (latent_width < 1) throw ConfigError("latent width must be positive");
  if (num_attn_blocks > 0) {
    if (bottleneck_width() % 4 != 0) {
      throw ConfigError("bottleneck width must be divisible by 4 for 2-D position encodings");
    }
    if (bottleneck_width() % heads() != 0) {
      throw ConfigError("bottleneck width not divisible by the attention head count");
    }
  }
}

ResBlockImpl::ResBlockImpl(int64_t in_channels, int64_t out_channels) {
  norm1 = register_module("norm1", nn::GroupNorm(nn::norm_groups(in_channels), in_channels));
  conv1 = register_module("conv1", nn::Conv2d(in_channels, out_channels, 3, 1, 1));
  norm2 = register_module("norm2", nn::GroupNorm(nn::norm_groups(out_channels), out_channels));
  conv2 = register_module("conv2", nn::Conv2d(out_channels, out_channels, 3, 1, 1));
  if (in_channels != out_channels) {
    shortcut = register_module("shortcut", nn::Conv2d(in_channels, out_channels, 1));
  }
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x) {
  auto h = conv1->forward(torch::silu(norm1->forward(x)));
  h = conv2->forward(torch::silu(norm2->forward(h)));
  return (shortcut ? shortcut->forward(x) : x) + h;
}

DownsampleBlockImpl::DownsampleBlockImpl(int64_t in_channels, int64_t out_channels,
                                         bool concurrent) {
  if (concurrent) {
    down = register_module("down", nn::Conv2d(in_channels, out_channels, 3, 2, 1));
  } else {
    down = register_module("down", nn::Conv2d(in_channels, in_channels, 3, 2, 1));
    if (in_channels != out_channels) {
      expand = register_module("expand", nn::Conv2d(in_channels, out_channels, 1));
    }
  }
}

torch::Tensor DownsampleBlockImpl::forward(const torch::Tensor& x) {
  if (x.size(2) % 2 != 0 || x.size(3) % 2 != 0) {
    std::ostringstream msg;
    msg << "downsample needs even spatial dims, got " << x.size(2) << "x" << x.size(3);
    throw ConfigError(msg.str());
  }
  auto h = down->forward(x);
  return expand ? expand->forward(h) : h;
}

UpsampleBlockImpl::UpsampleBlockImpl(int64_t in_channels, int64_t out_channels) {
  conv = register_module("conv", nn::Conv2d(in_channels, out_channels, 3, 1, 1));
}

torch::Tensor UpsampleBlockImpl::forward(const torch::Tensor& x) {
  namespace F = torch::nn::functional;
  auto up = F::interpolate(x, F::InterpolateFuncOptions()
                                  .scale_factor(std::vector<double>{2.0, 2.0})
                                  .mode(torch::kNearest));
  return conv->forward(up);
}

torch::Tensor position_encoding_2d(int64_t height, int64_t width, int64_t dim,
                                   const torch::TensorOptions& options) {
  const int64_t quarter = dim / 4;
  auto freq = torch::exp(torch::arange(quarter, options.dtype(torch::kFloat64)) *
                         (-std::log(10000.0) / static_cast<double>(std::max<int64_t>(quarter, 1))));
  auto rows = torch::arange(height, options.dtype(torch::kFloat64)).unsqueeze(1) * freq;
  auto cols = torch::arange(width, options.dtype(torch::kFloat64)).unsqueeze(1) * freq;
  auto row_enc = torch::cat({torch::sin(rows), torch::cos(rows)}, 1);  // [h, dim/2]
  auto col_enc = torch::cat({torch::sin(cols), torch::cos(cols)}, 1);  // [w, dim/2]
  auto grid = torch::cat({row_enc.unsqueeze(1).expand({height, width, dim / 2}),
                          col_enc.unsqueeze(0).expand({height, width, dim / 2})},
                         2);
  return grid.reshape({height * width, dim}).to(options.dtype());
}

namespace {

int level_width(const BackboneConfig& c, size_t level) {
  return c.base_channel * c.channel_mult[level];
}

void check_divisible(const torch::Tensor& images, int factor) {
  if (images.dim() != 4 || images.size(3) != 3) {
    std::ostringstream msg;
    msg << "expected images [B, H, W, 3], got " << images.sizes();
    throw ValidationError(msg.str());
  }
  if (images.size(1) % factor != 0) {
    throw ValidationError("image height " + std::to_string(images.size(1)) +
                          " is not divisible by the downsample factor " + std::to_string(factor));
  }
  if (images.size(2) % factor != 0) {
    throw ValidationError("image width " + std::to_string(images.size(2)) +
                          " is not divisible by the downsample factor " + std::to_string(factor));
  }
}

}  // namespace

EncoderImpl::EncoderImpl(const BackboneConfig& config) : config_(config) {
  config_.validate();
  conv_in = register_module("conv_in", nn::Conv2d(config.image_channels, level_width(config, 0),
                                                  3, 1, 1));
  levels = register_module("levels", torch::nn::ModuleList());
  for (size_t i = 0; i < config.channel_mult.size(); ++i) {
    torch::nn::Sequential level;
    const int width = level_width(config, i);
    for (int b = 0; b < config.num_res_blocks; ++b) level->push_back(ResBlock(width, width));
    if (i + 1 < config.channel_mult.size()) {
      level->push_back(
          DownsampleBlock(width, level_width(config, i + 1), config.concurrent_downsample));
    }
    levels->push_back(level);
  }
  const int bottleneck = config.bottleneck_width();
  attention = register_module("attention", torch::nn::ModuleList());
  for (int b = 0; b < config.num_attn_blocks; ++b) {
    attention->push_back(nn::TransformerBlock(bottleneck, config.heads()));
  }
  norm_out = register_module("norm_out", nn::LayerNorm(bottleneck));
  if (config.bottleneck_double) {
    widen = register_module("widen", nn::Linear(bottleneck, 2 * bottleneck));
    head = register_module("head", nn::Linear(2 * bottleneck, config.latent_width));
  } else {
    head = register_module("head", nn::Linear(bottleneck, config.latent_width));
  }
}

torch::Tensor EncoderImpl::forward(const torch::Tensor& images) {
  check_divisible(images, config_.downsample_factor());
  auto h = conv_in->forward(images.permute({0, 3, 1, 2}).contiguous());
  for (const auto& level : *levels) h = level->as<torch::nn::Sequential>()->forward(h);
  const int64_t batch = h.size(0), width = h.size(1), rows = h.size(2), cols = h.size(3);
  auto tokens = h.flatten(2).transpose(1, 2);  // [B, hw, C]
  if (!attention->is_empty()) {
    tokens = tokens + position_encoding_2d(rows, cols, width, tokens.options());
    for (const auto& block : *attention) tokens = block->as<nn::TransformerBlock>()->forward(tokens);
  }
  tokens = norm_out->forward(tokens);
  if (widen) tokens = torch::silu(widen->forward(tokens));
  auto latent = head->forward(tokens).reshape({batch, rows, cols, config_.latent_width});
  return config_.siglu ? siglu(latent) : latent;
}

DecoderImpl::DecoderImpl(const BackboneConfig& config) : config_(config) {
  config_.validate();
  const int bottleneck = config.bottleneck_width();
  if (config.bottleneck_double) {
    head_in = register_module("head_in", nn::Linear(config.latent_width, 2 * bottleneck));
    narrow = register_module("narrow", nn::Linear(2 * bottleneck, bottleneck));
  } else {
    head_in = register_module("head_in", nn::Linear(config.latent_width, bottleneck));
  }
  attention = register_module("attention", torch::nn::ModuleList());
  for (int b = 0; b < config.num_attn_blocks; ++b) {
    attention->push_back(nn::TransformerBlock(bottleneck, config.heads()));
  }
  levels = register_module("levels", torch::nn::ModuleList());
  for (size_t i = config.channel_mult.size(); i-- > 0;) {
    torch::nn::Sequential level;
    const int width = level_width(config, i);
    for (int b = 0; b < config.num_res_blocks; ++b) level->push_back(ResBlock(width, width));
    if (i > 0) level->push_back(UpsampleBlock(width, level_width(config, i - 1)));
    levels->push_back(level);
  }
  const int top = level_width(config, 0);
  norm_out = register_module("norm_out", nn::GroupNorm(nn::norm_groups(top), top));
  conv_out = register_module("conv_out", nn::Conv2d(top, config.image_channels, 3, 1, 1));
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& latent) {
  if (latent.dim() != 4 || latent.size(3) != config_.latent_width) {
    std::ostringstream msg;
    msg << "expected latent [B, h, w, " << config_.latent_width << "], got " << latent.sizes();
    throw ValidationError(msg.str());
  }
  const int64_t batch = latent.size(0), rows = latent.size(1), cols = latent.size(2);
  const int64_t width = config_.bottleneck_width();
  auto tokens = head_in->forward(latent.reshape({batch, rows * cols, latent.size(3)}));
  if (narrow) tokens = narrow->forward(torch::silu(tokens));
  if (!attention->is_empty()) {
    tokens = tokens + position_encoding_2d(rows, cols, width, tokens.options());
    for (const auto& block : *attention) tokens = block->as<nn::TransformerBlock>()->forward(tokens);
  }
  auto h = tokens.transpose(1, 2).reshape({batch, width, rows, cols});
  for (const auto& level : *levels) h = level->as<torch::nn::Sequential>()->forward(h);
  h = conv_out->forward(torch::silu(norm_out->forward(h)));
  return torch::clamp(h, -1.0, 1.0).permute({0, 2, 3, 1});
}

std::string backbone_arm(const BackboneConfig& config) {
  if (config.num_res_blocks > 0 && config.num_attn_blocks > 0) return "hybrid";
  if (config.num_res_blocks > 0) return "cnn-only";
  if (config.num_attn_blocks > 0) return "transformer-only";
  return "plain";
}

BackboneSummary summarize(const BackboneConfig& config) {
  config.validate();
  nn::ParamDeviceScope meta(torch::kMeta);
  Encoder encoder(config);
  Decoder decoder(config);
  BackboneSummary s;
  s.downsample_factor = config.downsample_factor();
  s.levels = static_cast<int>(config.channel_mult.size());
  s.encoder_parameters = nn::parameter_count(*encoder);
  s.decoder_parameters = nn::parameter_count(*decoder);
  for (const auto* module : {static_cast<torch::nn::Module*>(encoder.get()),
                             static_cast<torch::nn::Module*>(decoder.get())}) {
    for (const auto& item : module->named_parameters()) {
      if (item.key().rfind("attention.", 0) == 0) s.attention_parameters += item.value().numel();
      if (item.key().rfind("levels.", 0) == 0 && item.key().find(".conv1.") != std::string::npos)
        s.residual_parameters += item.value().numel();
      if (item.key().rfind("levels.", 0) == 0 && item.key().find(".conv2.") != std::string::npos)
        s.residual_parameters += item.value().numel();
    }
  }
  s.arm = backbone_arm(config);
  return s;
}

}  // namespace uniwetok
