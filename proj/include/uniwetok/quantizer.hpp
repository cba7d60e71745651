#pragma once

// Group-wise lookup-free quantization.
//
// A flat latent grid [B, h, w, g*d'] is viewed as [B, h, w, g, d'] and every
// channel is sign-quantized independently. The combined codebook has
// 2^(g*d') entries and is never materialized; the per-group codebooks of
// 2^d' codes are enumerated only inside codebook_entropy_loss.

#include <torch/torch.h>

#include <cstdint>
#include <vector>

namespace uniwetok {

struct QuantizerConfig {
  int groups = 4;         // g
  int bits_per_group = 8;  // d'
  bool siglu = true;
  double entropy_temperature = 1.0;

  int code_width() const { return groups * bits_per_group; }
  int64_t codes_per_group() const { return int64_t{1} << bits_per_group; }
  // Throws ConfigError.
  void validate() const;
};

// Signs and per-group ids of a quantized grid. signs is [..., g, d'] with
// entries in {-1,+1}; ids is [..., g] int64 with ids = sum_l bit_l * 2^l,
// bit_l = (sign_l + 1) / 2, least-significant bit first.
struct BinaryCode {
  torch::Tensor signs;
  torch::Tensor ids;
};

// [..., g*d'] -> [..., g, d']. Throws ConfigError on a width mismatch.
torch::Tensor group_reshape(const torch::Tensor& flat, const QuantizerConfig& config);
// [..., g, d'] -> [..., g*d'].
torch::Tensor ungroup(const torch::Tensor& grouped);

// (1 - e^x) / (1 + e^x), evaluated as -tanh(x / 2) and kept strictly inside
// (-1, 1) in the tensor's precision.
torch::Tensor siglu(const torch::Tensor& x);
double siglu(double x);

// Elementwise sign with sign(0) = +1.
BinaryCode quantize(const torch::Tensor& grouped);

// Forward value equals code.signs; the gradient passes to `grouped`
// unchanged. With pass_through = false the result is detached, which cuts
// every gradient path into the encoder through the quantized branch.
torch::Tensor straight_through(const torch::Tensor& grouped, const BinaryCode& code,
                               bool pass_through = true);

torch::Tensor codes_to_indices(const torch::Tensor& signs);
// Throws ValidationError for ids outside [0, 2^d').
BinaryCode indices_to_codes(const torch::Tensor& ids, const QuantizerConfig& config);

// Mean over positions and groups of the per-token code entropy (nats), with
// bits treated as independent Bernoulli variables. Range [0, d' ln 2].
torch::Tensor token_entropy_loss(const torch::Tensor& grouped, const QuantizerConfig& config);

// Negative entropy of the batch-mean per-group code distribution, averaged
// over groups. Range [-d' ln 2, 0]; minimizing it spreads codebook usage.
torch::Tensor codebook_entropy_loss(const torch::Tensor& grouped, const QuantizerConfig& config);

// mean((grouped - sg[signs])^2).
torch::Tensor commitment_loss(const torch::Tensor& grouped, const BinaryCode& code);

struct CodebookUsage {
  std::vector<double> per_group;
  double overall = 0.0;
  int64_t positions_seen = 0;
};

// Accumulates distinct ids per group over an evaluation stream.
class CodebookUsageCounter {
 public:
  explicit CodebookUsageCounter(const QuantizerConfig& config);
  // ids: [..., g] int64.
  void add(const torch::Tensor& ids);
  // Throws ValidationError if nothing was added.
  CodebookUsage result() const;

 private:
  QuantizerConfig config_;
  std::vector<uint8_t> seen_;
  int64_t positions_ = 0;
};

CodebookUsage codebook_usage(const std::vector<torch::Tensor>& id_stream,
                             const QuantizerConfig& config);

}  // namespace uniwetok
