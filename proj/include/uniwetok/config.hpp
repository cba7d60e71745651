#pragma once

// Flat "key = value" run configuration. Keys follow the ablation table row
// names ("g (group number)", "channel_mult", "SigLu activation", ...); a
// "stageN." prefix overrides a per-stage key for one curriculum stage.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "uniwetok/backbone.hpp"
#include "uniwetok/data.hpp"
#include "uniwetok/generative_prior.hpp"
#include "uniwetok/objective.hpp"
#include "uniwetok/optim.hpp"
#include "uniwetok/quantizer.hpp"
#include "uniwetok/semantic_distill.hpp"

namespace uniwetok {

enum class LrScheduleKind { constant, cosine };

struct LrSchedule {
  LrScheduleKind kind = LrScheduleKind::constant;
  double base = 1e-4;
  int64_t warmup_steps = 0;
  double end_ratio = 1.0;

  // Linear warmup, then constant or a cosine from base to base * end_ratio
  // over the remaining steps.
  double at(int64_t step, int64_t total_steps) const;
};

struct StageConfig {
  std::string name = "stage1";
  std::vector<int> resolutions{32};
  std::vector<DatasetSpec> datasets;
  int64_t steps = 0;
  LrSchedule lr;
  LossWeights weights;
  int batch_size = 8;
  Augmentation augmentation = Augmentation::random_crop;

  // Throws ConfigError: stage1 has one resolution, stage3 anneals with a
  // cosine schedule, resolutions divide the downsample factor.
  void validate(int downsample_factor, bool siglu) const;
};

struct TeacherSpec {
  std::string name = "--";  // "--" disables distillation
  int dim = 0;
  uint64_t seed = 0;
  std::filesystem::path store;  // file-backed embeddings

  bool enabled() const { return name != "--"; }
  bool synthetic() const { return name == "synthetic"; }
};

struct ModelConfig {
  BackboneConfig backbone;
  QuantizerConfig quantizer;
  bool generative_decoder = true;  // recorded only
  TeacherSpec teacher;
  DistillArms arms{false, false, 1.0};
  PoolKind head = PoolKind::linear;
  std::string prior_model = "--";
  PriorConfig prior;
  int discriminator_channels = 32;
  uint64_t perceptual_seed = 1234;

  bool prior_enabled() const { return prior_model != "--"; }
};

struct RunConfig {
  ModelConfig model;
  AdamOptions adam;
  bool ema = true;
  double ema_decay = 0.999;
  uint64_t seed = 0;
  std::vector<StageConfig> stages;
  DatasetSpec eval_data;
  int eval_samples = 64;
  int eval_resolution = 0;  // 0: first resolution of the last stage
  // Entries in file order, as written.
  std::vector<std::pair<std::string, std::string>> entries;

  std::string text() const;
  uint64_t fingerprint() const;
};

// Throws ConfigError naming the offending key (and line).
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

// Prior hyperparameters behind a named prior model.
PriorConfig prior_preset(const std::string& name);
// Embedding width of a named teacher; 0 when unknown.
int known_teacher_dim(const std::string& name);

}  // namespace uniwetok
