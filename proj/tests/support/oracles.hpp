#pragma once

// Test-side oracles, written independently of the library: brute-force code
// enumeration, closed-form metric values, parameter-count arithmetic and a
// central-difference gradient checker.

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

namespace oracle {

inline constexpr double kEps = 1e-8;

inline double bit_prob(double u, bool siglu, double tau) {
  return siglu ? (1.0 + u) / 2.0 : 1.0 / (1.0 + std::exp(-2.0 * u / tau));
}

// Probability of code c (bit l = (c >> l) & 1) for one token of d' channels.
inline double code_prob(const double* u, int d, int c, bool siglu, double tau) {
  double q = 1.0;
  for (int l = 0; l < d; ++l) {
    const double p = bit_prob(u[l], siglu, tau);
    q *= ((c >> l) & 1) ? p : 1.0 - p;
  }
  return q;
}

// u laid out [positions][groups][d]. Entropy of each token's full code
// distribution, enumerated over all 2^d codes, averaged over tokens.
inline double token_entropy(const std::vector<double>& u, int groups, int d, bool siglu = true,
                            double tau = 1.0) {
  const size_t tokens = u.size() / d;
  double total = 0.0;
  for (size_t t = 0; t < tokens; ++t) {
    for (int c = 0; c < (1 << d); ++c) {
      const double q = code_prob(&u[t * d], d, c, siglu, tau);
      total -= q * std::log(std::max(q, kEps));
    }
  }
  return total / static_cast<double>(tokens);
}

// Negative entropy of the position-averaged code distribution, averaged over groups.
inline double codebook_entropy(const std::vector<double>& u, int groups, int d, bool siglu = true,
                               double tau = 1.0) {
  const size_t positions = u.size() / (static_cast<size_t>(groups) * d);
  double total = 0.0;
  for (int g = 0; g < groups; ++g) {
    double h = 0.0;
    for (int c = 0; c < (1 << d); ++c) {
      double mean = 0.0;
      for (size_t p = 0; p < positions; ++p) {
        mean += code_prob(&u[(p * groups + g) * d], d, c, siglu, tau);
      }
      mean /= static_cast<double>(positions);
      h -= mean * std::log(std::max(mean, kEps));
    }
    total -= h;
  }
  return total / groups;
}

// Integer id of a sign vector, least-significant bit first.
inline int64_t code_id(const std::vector<double>& signs) {
  int64_t id = 0;
  for (size_t l = 0; l < signs.size(); ++l) {
    if (signs[l] >= 0.0) id |= int64_t{1} << l;
  }
  return id;
}

inline double psnr(double mse) { return mse == 0.0 ? 99.0 : std::min(99.0, 10.0 * std::log10(4.0 / mse)); }

// SSIM of two constant images with values x and y (variances vanish).
inline double ssim_constant(double x, double y) {
  const double c1 = (0.01 * 2.0) * (0.01 * 2.0);
  return (2.0 * x * y + c1) / (x * x + y * y + c1);
}

// ---- parameter arithmetic ---------------------------------------------------

inline int64_t conv(int64_t in, int64_t out, int64_t k) { return in * out * k * k + out; }
inline int64_t linear(int64_t in, int64_t out) { return in * out + out; }
inline int64_t norm(int64_t c) { return 2 * c; }

inline int64_t res_block(int64_t in, int64_t out) {
  return norm(in) + conv(in, out, 3) + norm(out) + conv(out, out, 3) + (in != out ? conv(in, out, 1) : 0);
}
inline int64_t attention(int64_t dim, int64_t kv) { return 2 * linear(dim, dim) + 2 * linear(kv, dim); }
inline int64_t transformer(int64_t dim) {
  return 2 * norm(dim) + attention(dim, dim) + linear(dim, 4 * dim) + linear(4 * dim, dim);
}

struct Backbone {
  int channel;
  std::vector<int> mult;
  int res_blocks;
  int attn_blocks;
  bool bottleneck_double;
  bool concurrent;
  int latent;
};

inline int64_t encoder_params(const Backbone& b) {
  int64_t n = conv(3, b.channel * b.mult[0], 3);
  for (size_t i = 0; i < b.mult.size(); ++i) {
    const int64_t w = b.channel * b.mult[i];
    n += b.res_blocks * res_block(w, w);
    if (i + 1 < b.mult.size()) {
      const int64_t next = b.channel * b.mult[i + 1];
      n += b.concurrent ? conv(w, next, 3) : conv(w, w, 3) + (w != next ? conv(w, next, 1) : 0);
    }
  }
  const int64_t bw = b.channel * b.mult.back();
  n += b.attn_blocks * transformer(bw) + norm(bw);
  n += b.bottleneck_double ? linear(bw, 2 * bw) + linear(2 * bw, b.latent) : linear(bw, b.latent);
  return n;
}

inline int64_t decoder_params(const Backbone& b) {
  const int64_t bw = b.channel * b.mult.back();
  int64_t n = b.bottleneck_double ? linear(b.latent, 2 * bw) + linear(2 * bw, bw) : linear(b.latent, bw);
  n += b.attn_blocks * transformer(bw);
  for (size_t i = b.mult.size(); i-- > 0;) {
    const int64_t w = b.channel * b.mult[i];
    n += b.res_blocks * res_block(w, w);
    if (i > 0) n += conv(w, b.channel * b.mult[i - 1], 3);
  }
  const int64_t top = b.channel * b.mult[0];
  return n + norm(top) + conv(top, 3, 3);
}

inline int64_t prior_params(int layers, int width, int time_dim, bool query, int token_width) {
  return (query ? width : 0) + 2 * linear(token_width, width) + linear(time_dim, width) +
         linear(width, width) + layers * transformer(width) + norm(width) + linear(width, token_width);
}

inline int64_t pool_head_params(bool attention_kind, int latent, int teacher_dim, int attn_width = 64) {
  if (!attention_kind) return linear(latent, teacher_dim);
  return attn_width + attention(attn_width, latent) + linear(attn_width, teacher_dim);
}

// ---- gradients --------------------------------------------------------------

struct GradCheck {
  double max_rel_error = 0.0;
  int64_t checked = 0;
};

// Central differences with step h on up to `max_entries` entries of `param`
// (float64, requires_grad). `loss` must rebuild the graph on each call.
// Relative error is |a - n| / max(|a|, |n|, floor).
inline GradCheck check_gradient(torch::Tensor param, const std::function<torch::Tensor()>& loss,
                                double h = 1e-5, int64_t max_entries = 64, double floor = 1e-6) {
  if (param.grad().defined()) param.mutable_grad().zero_();
  loss().backward();
  auto analytic = param.grad().detach().clone().flatten();
  GradCheck result;
  torch::NoGradGuard no_grad;
  auto flat = param.view({-1});
  const int64_t n = flat.numel();
  const int64_t stride = std::max<int64_t>(1, n / max_entries);
  for (int64_t i = 0; i < n; i += stride) {
    const double orig = flat[i].item<double>();
    flat[i].fill_(orig + h);
    const double up = loss().item<double>();
    flat[i].fill_(orig - h);
    const double down = loss().item<double>();
    flat[i].fill_(orig);
    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic[i].item<double>();
    const double denom = std::max({std::abs(a), std::abs(numeric), floor});
    result.max_rel_error = std::max(result.max_rel_error, std::abs(a - numeric) / denom);
    ++result.checked;
  }
  return result;
}

}  // namespace oracle
