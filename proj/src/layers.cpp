#include "uniwetok/layers.hpp"

#include <cmath>
#include <numeric>

namespace uniwetok::nn {
namespace {

thread_local torch::Device g_param_device = torch::kCPU;

torch::Tensor uniform_param(std::vector<int64_t> shape, double bound) {
  auto t = torch::empty(shape, param_options());
  if (!t.is_meta()) {
    torch::NoGradGuard no_grad;
    t.uniform_(-bound, bound);
  }
  return t;
}

torch::Tensor constant_param(std::vector<int64_t> shape, double value) {
  auto t = torch::empty(shape, param_options());
  if (!t.is_meta()) t.fill_(value);
  return t;
}

}  // namespace

torch::TensorOptions param_options() {
  return torch::TensorOptions().dtype(torch::kFloat32).device(g_param_device);
}

ParamDeviceScope::ParamDeviceScope(torch::Device device) : previous_(g_param_device) {
  g_param_device = device;
}

ParamDeviceScope::~ParamDeviceScope() { g_param_device = previous_; }

// Default initialisation follows torch.nn: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
LinearImpl::LinearImpl(int64_t in_features, int64_t out_features, bool with_bias) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_features));
  weight = register_parameter("weight", uniform_param({out_features, in_features}, bound));
  if (with_bias) bias = register_parameter("bias", uniform_param({out_features}, bound));
}

torch::Tensor LinearImpl::forward(const torch::Tensor& x) {
  return torch::nn::functional::linear(x, weight, bias);
}

Conv2dImpl::Conv2dImpl(int64_t in_channels, int64_t out_channels, int64_t kernel,
                       int64_t stride_, int64_t padding_)
    : stride(stride_), padding(padding_) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_channels * kernel * kernel));
  weight = register_parameter("weight",
                              uniform_param({out_channels, in_channels, kernel, kernel}, bound));
  bias = register_parameter("bias", uniform_param({out_channels}, bound));
}

torch::Tensor Conv2dImpl::forward(const torch::Tensor& x) {
  return torch::conv2d(x, weight, bias, stride, padding);
}

GroupNormImpl::GroupNormImpl(int64_t groups_, int64_t channels) : groups(groups_) {
  weight = register_parameter("weight", constant_param({channels}, 1.0));
  bias = register_parameter("bias", constant_param({channels}, 0.0));
}

torch::Tensor GroupNormImpl::forward(const torch::Tensor& x) {
  return torch::group_norm(x, groups, weight, bias, 1e-6);
}

LayerNormImpl::LayerNormImpl(int64_t dim) {
  weight = register_parameter("weight", constant_param({dim}, 1.0));
  bias = register_parameter("bias", constant_param({dim}, 0.0));
}

torch::Tensor LayerNormImpl::forward(const torch::Tensor& x) {
  return torch::layer_norm(x, {x.size(-1)}, weight, bias, 1e-6);
}

MultiHeadAttentionImpl::MultiHeadAttentionImpl(int64_t dim, int64_t heads_, int64_t kv_dim)
    : heads(heads_) {
  TORCH_CHECK(dim % heads == 0, "attention width ", dim, " not divisible by ", heads, " heads");
  if (kv_dim <= 0) kv_dim = dim;
  q = register_module("q", Linear(dim, dim));
  k = register_module("k", Linear(kv_dim, dim));
  v = register_module("v", Linear(kv_dim, dim));
  out = register_module("out", Linear(dim, dim));
}

torch::Tensor MultiHeadAttentionImpl::forward(const torch::Tensor& query,
                                              const torch::Tensor& context,
                                              const std::optional<torch::Tensor>& allowed) {
  const int64_t batch = query.size(0);
  const int64_t lq = query.size(1);
  const int64_t lk = context.size(1);
  const int64_t dim = query.size(2);
  const int64_t head_dim = dim / heads;
  auto split = [&](const torch::Tensor& t, int64_t len) {
    return t.view({batch, len, heads, head_dim}).transpose(1, 2);
  };
  auto qh = split(q->forward(query), lq);
  auto kh = split(k->forward(context), lk);
  auto vh = split(v->forward(context), lk);
  auto scores = torch::matmul(qh, kh.transpose(-2, -1)) / std::sqrt(static_cast<double>(head_dim));
  if (allowed) scores = scores.masked_fill(allowed->logical_not(), -1e30);
  auto weights = torch::softmax(scores, -1);
  auto mixed = torch::matmul(weights, vh).transpose(1, 2).reshape({batch, lq, dim});
  return out->forward(mixed);
}

TransformerBlockImpl::TransformerBlockImpl(int64_t dim, int64_t heads, int64_t mlp_ratio) {
  norm1 = register_module("norm1", LayerNorm(dim));
  attn = register_module("attn", MultiHeadAttention(dim, heads));
  norm2 = register_module("norm2", LayerNorm(dim));
  fc1 = register_module("fc1", Linear(dim, dim * mlp_ratio));
  fc2 = register_module("fc2", Linear(dim * mlp_ratio, dim));
}

torch::Tensor TransformerBlockImpl::forward(const torch::Tensor& x,
                                            const std::optional<torch::Tensor>& allowed) {
  auto h = norm1->forward(x);
  auto y = x + attn->forward(h, h, allowed);
  return y + fc2->forward(torch::gelu(fc1->forward(norm2->forward(y))));
}

int64_t norm_groups(int64_t channels) { return std::gcd(channels, int64_t{32}); }

int64_t parameter_count(const torch::nn::Module& module) {
  int64_t total = 0;
  for (const auto& p : module.parameters()) total += p.numel();
  return total;
}

}  // namespace uniwetok::nn
