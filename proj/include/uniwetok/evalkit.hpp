#pragma once

// Reconstruction metrics, codebook audits and ablation tables.
//
// Report text format: one "key=value" record per line in this order:
//   samples, resolution, fingerprint, recon_mse, psnr, ssim, usage_overall,
//   usage_group_<k> for each group, frechet_proxy, zero_shot_top1, zero_shot_top5.
// Optional fields are omitted when absent. The JSON sidecar carries the same
// fields under the same names, with usage_per_group as an array.

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "uniwetok/data.hpp"
#include "uniwetok/model.hpp"
#include "uniwetok/objective.hpp"
#include "uniwetok/quantizer.hpp"
#include "uniwetok/semantic_distill.hpp"

namespace uniwetok {

inline constexpr double kPsnrCap = 99.0;

// 10*log10(4 / mse), capped at 99 dB. Throws ValidationError on negative mse.
double psnr_from_mse(double mse);
// Images in [-1, 1], any matching shapes. Throws ValidationError on mismatch.
double psnr(const torch::Tensor& a, const torch::Tensor& b);

// Channel-mean gray SSIM of two [H, W, 3] (or [H, W]) images with an 11x11
// Gaussian window (sigma 1.5) and L = 2. Throws ValidationError for shape
// mismatches or images smaller than the window.
double ssim(const torch::Tensor& a, const torch::Tensor& b);

// Frechet distance between Gaussian fits of two [N, F] feature sets,
// N >= 2 each. Covariances get a 1e-6 diagonal jitter.
double frechet_distance(const torch::Tensor& features_a, const torch::Tensor& features_b);
// Same, on PerceptualNet descriptors of two image batches.
double frechet_proxy(const torch::Tensor& images_a, const torch::Tensor& images_b,
                     const PerceptualNet& net);

struct MetricReport {
  int64_t samples = 0;
  int resolution = 0;
  uint64_t fingerprint = 0;
  double recon_mse = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  CodebookUsage usage;
  std::optional<double> frechet_proxy;
  std::optional<ZeroShotResult> zero_shot;

  std::string to_text() const;
  nlohmann::json to_json() const;
  static MetricReport from_json(const nlohmann::json& j);
};

struct EvalSpec {
  DatasetSpec data;
  int samples = 64;
  int resolution = 32;
  int batch_size = 16;
  bool frechet = true;
  bool zero_shot = true;  // needs a post head, a teacher and labeled samples
  DatasetSpec prototypes;  // labeled set the class prototypes come from
  int prototype_samples = 256;
};

// Decoder(quantize(encoder(x))) over a fixed eval set. Deterministic.
MetricReport evaluate(ModelBundle& model, const EvalSpec& spec, uint64_t fingerprint = 0);

// Zero-shot proxy with prototypes drawn from `prototypes` and queries pooled
// by the post head from quantized latents of `queries`.
ZeroShotResult zero_shot_accuracy(ModelBundle& model, const Batch& queries, const Batch& prototypes);

// Sign codes of every image in `batch` as prior sequences [N, h*w, g*d'].
torch::Tensor token_sequences(ModelBundle& model, const Batch& batch, int64_t chunk = 32);

// Writes <dir>/report.txt and <dir>/report.json. Throws IoError.
void write_report(const std::filesystem::path& dir, const MetricReport& report);
MetricReport read_report(const std::filesystem::path& dir);

// Fixed-width comparison of runs. Each run dir holds report.json and either
// config.cfg or a checkpoint under latest/. Rows are labeled by the config
// keys whose values differ across runs; missing metrics print as "-".
// Throws IoError when a run dir has no report.
std::string ablation_report(const std::vector<std::filesystem::path>& run_dirs);

}  // namespace uniwetok
