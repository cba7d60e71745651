#pragma once

// Small parameterized layers shared by the tokenizer, pooling heads, prior
// and discriminator. Parameters are created through param_options(), so a
// ParamDeviceScope(torch::kMeta) builds full-size models for parameter
// introspection without allocating storage.

#include <torch/torch.h>

#include <optional>

namespace uniwetok::nn {

torch::TensorOptions param_options();

class ParamDeviceScope {
 public:
  explicit ParamDeviceScope(torch::Device device);
  ~ParamDeviceScope();
  ParamDeviceScope(const ParamDeviceScope&) = delete;
  ParamDeviceScope& operator=(const ParamDeviceScope&) = delete;

 private:
  torch::Device previous_;
};

// Applies to the last dimension.
class LinearImpl : public torch::nn::Module {
 public:
  LinearImpl(int64_t in_features, int64_t out_features, bool bias = true);
  torch::Tensor forward(const torch::Tensor& x);

  torch::Tensor weight;
  torch::Tensor bias;
};
TORCH_MODULE(Linear);

// NCHW convolution.
class Conv2dImpl : public torch::nn::Module {
 public:
  Conv2dImpl(int64_t in_channels, int64_t out_channels, int64_t kernel, int64_t stride = 1,
             int64_t padding = 0);
  torch::Tensor forward(const torch::Tensor& x);

  torch::Tensor weight;
  torch::Tensor bias;
  int64_t stride;
  int64_t padding;
};
TORCH_MODULE(Conv2d);

class GroupNormImpl : public torch::nn::Module {
 public:
  GroupNormImpl(int64_t groups, int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);

  torch::Tensor weight;
  torch::Tensor bias;
  int64_t groups;
};
TORCH_MODULE(GroupNorm);

class LayerNormImpl : public torch::nn::Module {
 public:
  explicit LayerNormImpl(int64_t dim);
  torch::Tensor forward(const torch::Tensor& x);

  torch::Tensor weight;
  torch::Tensor bias;
};
TORCH_MODULE(LayerNorm);

// Multi-head attention over [B, L, D] sequences. Keys/values may come from a
// different sequence of width kv_dim (cross-attention). `allowed` is an
// optional [Lq, Lk] boolean mask (true = may attend).
class MultiHeadAttentionImpl : public torch::nn::Module {
 public:
  MultiHeadAttentionImpl(int64_t dim, int64_t heads, int64_t kv_dim = 0);
  torch::Tensor forward(const torch::Tensor& query, const torch::Tensor& context,
                        const std::optional<torch::Tensor>& allowed = std::nullopt);

  int64_t heads;
  Linear q{nullptr}, k{nullptr}, v{nullptr}, out{nullptr};
};
TORCH_MODULE(MultiHeadAttention);

// Pre-norm transformer block: x + attn(ln(x)), then x + mlp(ln(x)).
class TransformerBlockImpl : public torch::nn::Module {
 public:
  TransformerBlockImpl(int64_t dim, int64_t heads, int64_t mlp_ratio = 4);
  torch::Tensor forward(const torch::Tensor& x,
                        const std::optional<torch::Tensor>& allowed = std::nullopt);

  LayerNorm norm1{nullptr}, norm2{nullptr};
  MultiHeadAttention attn{nullptr};
  Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(TransformerBlock);

// gcd(channels, 32): the group count used by every GroupNorm here.
int64_t norm_groups(int64_t channels);

int64_t parameter_count(const torch::nn::Module& module);

}  // namespace uniwetok::nn
