#include "uniwetok/quantizer.hpp"

#include <cmath>
#include <limits>
#include <span>
#include <sstream>

#include "uniwetok/errors.hpp"
#include "uniwetok/kernels.hpp"

namespace uniwetok {

using torch::autograd::AutogradContext;
using torch::autograd::tensor_list;

void QuantizerConfig::validate() const {
  if (groups < 1) throw ConfigError("g (group number) must be >= 1, got " + std::to_string(groups));
  if (bits_per_group < 1 || bits_per_group > 32) {
    throw ConfigError("d' (group channel) must be in [1, 32], got " +
                      std::to_string(bits_per_group));
  }
  if (!(entropy_temperature > 0.0)) throw ConfigError("entropy temperature must be positive");
}

torch::Tensor group_reshape(const torch::Tensor& flat, const QuantizerConfig& config) {
  const int64_t width = flat.size(-1);
  if (width != config.code_width()) {
    std::ostringstream msg;
    msg << "latent channel count mismatch: expected g*d' = " << config.groups << "*"
        << config.bits_per_group << " = " << config.code_width() << ", got " << width;
    throw ConfigError(msg.str());
  }
  auto shape = flat.sizes().vec();
  shape.back() = config.groups;
  shape.push_back(config.bits_per_group);
  return flat.reshape(shape);
}

torch::Tensor ungroup(const torch::Tensor& grouped) {
  auto shape = grouped.sizes().vec();
  const int64_t d = shape.back();
  shape.pop_back();
  shape.back() *= d;
  return grouped.reshape(shape);
}

torch::Tensor siglu(const torch::Tensor& x) {
  const double eps = x.scalar_type() == torch::kFloat64
                         ? std::numeric_limits<double>::epsilon()
                         : static_cast<double>(std::numeric_limits<float>::epsilon());
  return torch::clamp(-torch::tanh(0.5 * x), -1.0 + eps, 1.0 - eps);
}

double siglu(double x) {
  constexpr double eps = std::numeric_limits<double>::epsilon();
  return std::clamp(-std::tanh(0.5 * x), -1.0 + eps, 1.0 - eps);
}

BinaryCode quantize(const torch::Tensor& grouped) {
  auto values = grouped.detach();
  auto positive = values >= 0;
  BinaryCode code;
  code.signs = torch::where(positive, torch::ones_like(values), -torch::ones_like(values));
  code.ids = codes_to_indices(code.signs);
  return code;
}

torch::Tensor straight_through(const torch::Tensor& grouped, const BinaryCode& code,
                               bool pass_through) {
  if (grouped.sizes() != code.signs.sizes()) {
    throw InternalError("straight_through: latent and code shapes differ");
  }
  if (!pass_through) return code.signs.detach();
  return grouped + (code.signs - grouped).detach();
}

torch::Tensor codes_to_indices(const torch::Tensor& signs) {
  const int64_t d_prime = signs.size(-1);
  auto bits = (signs.detach() > 0).to(torch::kInt64);
  auto weights = torch::pow(torch::full({d_prime}, 2, torch::kInt64),
                            torch::arange(d_prime, torch::kInt64));
  return (bits * weights).sum(-1);
}

BinaryCode indices_to_codes(const torch::Tensor& ids, const QuantizerConfig& config) {
  auto flat = ids.to(torch::kInt64);
  if (flat.numel() > 0) {
    const int64_t lo = flat.min().item<int64_t>();
    const int64_t hi = flat.max().item<int64_t>();
    if (lo < 0 || hi >= config.codes_per_group()) {
      std::ostringstream msg;
      msg << "token id out of range [0, " << config.codes_per_group() << "): found "
          << (lo < 0 ? lo : hi);
      throw ValidationError(msg.str());
    }
  }
  auto shifts = torch::arange(config.bits_per_group, torch::kInt64);
  auto bits = torch::bitwise_and(torch::bitwise_right_shift(flat.unsqueeze(-1), shifts), 1);
  BinaryCode code;
  code.signs = bits.to(torch::kFloat32) * 2 - 1;
  code.ids = flat;
  return code;
}

namespace {

template <typename Fn>
auto dispatch_real(const torch::Tensor& t, Fn&& fn) {
  if (t.scalar_type() == torch::kFloat64) return fn(double{});
  if (t.scalar_type() == torch::kFloat32) return fn(float{});
  throw InternalError("entropy kernels support float32 and float64 only");
}

template <typename T>
std::span<const T> view(const torch::Tensor& t) {
  return {t.data_ptr<T>(), static_cast<size_t>(t.numel())};
}

template <typename T>
std::span<T> mutable_view(torch::Tensor& t) {
  return {t.data_ptr<T>(), static_cast<size_t>(t.numel())};
}

class TokenEntropyFunction : public torch::autograd::Function<TokenEntropyFunction> {
 public:
  static torch::Tensor forward(AutogradContext* ctx, torch::Tensor grouped, int64_t d_prime,
                               bool siglu_enabled, double temperature) {
    auto u = grouped.contiguous();
    ctx->save_for_backward({u});
    ctx->saved_data["d_prime"] = d_prime;
    ctx->saved_data["siglu"] = siglu_enabled;
    ctx->saved_data["temperature"] = temperature;
    const kernels::BitProbability prob{siglu_enabled, temperature};
    const double value = dispatch_real(u, [&](auto tag) {
      using T = decltype(tag);
      return kernels::parallel::token_entropy_forward<T>(view<T>(u), static_cast<int>(d_prime),
                                                         prob);
    });
    return torch::full({}, value, u.options());
  }

  static tensor_list backward(AutogradContext* ctx, tensor_list grad_outputs) {
    auto u = ctx->get_saved_variables()[0];
    const auto d_prime = static_cast<int>(ctx->saved_data["d_prime"].toInt());
    const kernels::BitProbability prob{ctx->saved_data["siglu"].toBool(),
                                       ctx->saved_data["temperature"].toDouble()};
    const double g = grad_outputs[0].item<double>();
    auto grad = torch::empty_like(u);
    dispatch_real(u, [&](auto tag) {
      using T = decltype(tag);
      kernels::parallel::token_entropy_backward<T>(view<T>(u), d_prime, prob, g,
                                                   mutable_view<T>(grad));
      return 0;
    });
    return {grad, torch::Tensor(), torch::Tensor(), torch::Tensor()};
  }
};

class CodebookEntropyFunction : public torch::autograd::Function<CodebookEntropyFunction> {
 public:
  static torch::Tensor forward(AutogradContext* ctx, torch::Tensor grouped, int64_t groups,
                               int64_t d_prime, bool siglu_enabled, double temperature) {
    auto u = grouped.contiguous();
    ctx->save_for_backward({u});
    ctx->saved_data["groups"] = groups;
    ctx->saved_data["d_prime"] = d_prime;
    ctx->saved_data["siglu"] = siglu_enabled;
    ctx->saved_data["temperature"] = temperature;
    const kernels::BitProbability prob{siglu_enabled, temperature};
    const double value = dispatch_real(u, [&](auto tag) {
      using T = decltype(tag);
      return kernels::parallel::codebook_entropy_forward<T>(
          view<T>(u), static_cast<int>(groups), static_cast<int>(d_prime), prob);
    });
    return torch::full({}, value, u.options());
  }

  static tensor_list backward(AutogradContext* ctx, tensor_list grad_outputs) {
    auto u = ctx->get_saved_variables()[0];
    const auto groups = static_cast<int>(ctx->saved_data["groups"].toInt());
    const auto d_prime = static_cast<int>(ctx->saved_data["d_prime"].toInt());
    const kernels::BitProbability prob{ctx->saved_data["siglu"].toBool(),
                                       ctx->saved_data["temperature"].toDouble()};
    const double g = grad_outputs[0].item<double>();
    auto grad = torch::empty_like(u);
    dispatch_real(u, [&](auto tag) {
      using T = decltype(tag);
      kernels::parallel::codebook_entropy_backward<T>(view<T>(u), groups, d_prime, prob, g,
                                                      mutable_view<T>(grad));
      return 0;
    });
    return {grad, torch::Tensor(), torch::Tensor(), torch::Tensor(), torch::Tensor()};
  }
};

void check_grouped(const torch::Tensor& grouped, const QuantizerConfig& config) {
  if (grouped.dim() < 2 || grouped.size(-1) != config.bits_per_group ||
      grouped.size(-2) != config.groups) {
    std::ostringstream msg;
    msg << "expected a grouped latent [..., " << config.groups << ", " << config.bits_per_group
        << "], got " << grouped.sizes();
    throw ValidationError(msg.str());
  }
}

}  // namespace

torch::Tensor token_entropy_loss(const torch::Tensor& grouped, const QuantizerConfig& config) {
  check_grouped(grouped, config);
  return TokenEntropyFunction::apply(grouped, config.bits_per_group, config.siglu,
                                     config.entropy_temperature);
}

torch::Tensor codebook_entropy_loss(const torch::Tensor& grouped, const QuantizerConfig& config) {
  check_grouped(grouped, config);
  if (config.bits_per_group > kernels::kMaxEnumeratedBits) {
    throw ConfigError("codebook entropy enumerates 2^d' codes; d' must be <= " +
                      std::to_string(kernels::kMaxEnumeratedBits));
  }
  return CodebookEntropyFunction::apply(grouped, config.groups, config.bits_per_group,
                                        config.siglu, config.entropy_temperature);
}

torch::Tensor commitment_loss(const torch::Tensor& grouped, const BinaryCode& code) {
  return (grouped - code.signs.detach().to(grouped.scalar_type())).pow(2).mean();
}

CodebookUsageCounter::CodebookUsageCounter(const QuantizerConfig& config)
    : config_(config),
      seen_(static_cast<size_t>(config.groups) * config.codes_per_group(), 0) {
  if (config.bits_per_group > 24) throw ConfigError("codebook usage tracking supports d' <= 24");
}

void CodebookUsageCounter::add(const torch::Tensor& ids) {
  auto flat = ids.to(torch::kInt64).contiguous().reshape({-1, config_.groups});
  if (flat.numel() == 0) return;
  const int64_t hi = flat.max().item<int64_t>();
  const int64_t lo = flat.min().item<int64_t>();
  if (lo < 0 || hi >= config_.codes_per_group()) throw ValidationError("token id out of range");
  kernels::parallel::mark_usage({flat.data_ptr<int64_t>(), static_cast<size_t>(flat.numel())},
                                config_.groups, config_.bits_per_group, seen_);
  positions_ += flat.size(0);
}

CodebookUsage CodebookUsageCounter::result() const {
  if (positions_ == 0) throw ValidationError("codebook usage needs a nonempty id stream");
  CodebookUsage usage;
  usage.positions_seen = positions_;
  const int64_t codes = config_.codes_per_group();
  for (int k = 0; k < config_.groups; ++k) {
    int64_t distinct = 0;
    for (int64_t c = 0; c < codes; ++c) distinct += seen_[k * codes + c];
    usage.per_group.push_back(static_cast<double>(distinct) / static_cast<double>(codes));
  }
  double sum = 0.0;
  for (double v : usage.per_group) sum += v;
  usage.overall = sum / static_cast<double>(config_.groups);
  return usage;
}

CodebookUsage codebook_usage(const std::vector<torch::Tensor>& id_stream,
                             const QuantizerConfig& config) {
  CodebookUsageCounter counter(config);
  for (const auto& ids : id_stream) counter.add(ids);
  return counter.result();
}

}  // namespace uniwetok
