#pragma once

// Stage runner and three-stage curriculum. One thread owns the parameters;
// batches, diffusion noise and timesteps are derived from (seed, stage, step),
// so two runs with one seed write identical metrics logs and a resumed run
// continues exactly where the checkpoint left off.

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "uniwetok/checkpoint.hpp"
#include "uniwetok/config.hpp"
#include "uniwetok/data.hpp"
#include "uniwetok/model.hpp"
#include "uniwetok/optim.hpp"

namespace uniwetok {

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: nothing written to disk
  std::ostream* echo = nullptr;   // metrics lines are mirrored here when set
  int64_t stop_after = -1;        // >= 0: pause the current stage after this many steps
};

struct StepLog {
  std::string stage;
  LossReport report;
  double learning_rate = 0.0;
  int resolution = 0;

  std::string to_line() const;
};

class Trainer {
 public:
  // Seeds parameter initialization with `seed`. Throws ConfigError for
  // configs that cannot train (e.g. a named teacher without a store).
  Trainer(const RunConfig& config, uint64_t seed);

  ModelBundle& bundle() { return *bundle_; }
  const RunConfig& config() const { return config_; }
  uint64_t seed() const { return seed_; }

  // Runs the listed stages in order from the current position. Writes
  // <out>/metrics.log and a boundary checkpoint <out>/<stage>/ per stage.
  std::vector<StepLog> run_curriculum(const TrainOptions& options);
  // Runs one stage (by index into config().stages) from the current position.
  std::vector<StepLog> run_stage(size_t stage_index, const TrainOptions& options);

  // One optimizer step on `batch`.
  StepLog step(size_t stage_index, int64_t stage_step, const Batch& batch);

  Checkpoint checkpoint() const;
  // Restores parameters, optimizer moments, EMA shadows and the position.
  void restore(const Checkpoint& checkpoint);

  // EMA shadows of the autoencoder, keyed like autoencoder_parameters().
  const std::map<std::string, torch::Tensor>& ema() const { return ema_; }
  // Position: next stage index and the step inside it.
  size_t stage_index() const { return stage_index_; }
  int64_t stage_step() const { return stage_step_; }

 private:
  void update_ema();

  RunConfig config_;
  uint64_t seed_;
  std::unique_ptr<ModelBundle> bundle_;
  std::unique_ptr<Adam> generator_opt_;
  std::unique_ptr<Adam> discriminator_opt_;
  std::map<std::string, torch::Tensor> ema_;
  int64_t ema_updates_ = 0;
  size_t stage_index_ = 0;
  int64_t stage_step_ = 0;
};

// Loads a checkpoint into a fresh bundle for inference, with EMA weights in
// place when the run kept them. Throws IoError / FormatError / ConfigError.
struct LoadedModel {
  RunConfig config;
  std::unique_ptr<ModelBundle> bundle;
  Checkpoint checkpoint;
};
LoadedModel load_model(const std::filesystem::path& checkpoint_dir, bool use_ema = true);

}  // namespace uniwetok
