#include "uniwetok/curriculum.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include "uniwetok/errors.hpp"

namespace uniwetok {

namespace {

int stage_number(const std::string& name) { return name.back() - '0'; }

BundleOptions training_options(const RunConfig& config) {
  BundleOptions o;
  for (const auto& s : config.stages) {
    o.discriminator = o.discriminator || s.weights.gamma > 0.0;
    o.perceptual = o.perceptual || s.weights.beta > 0.0;
  }
  return o;
}

}  // namespace

std::string StepLog::to_line() const {
  std::ostringstream out;
  out << std::setprecision(9) << "stage=" << stage << " " << report.to_line()
      << " lr=" << learning_rate << " res=" << resolution;
  return out.str();
}

Trainer::Trainer(const RunConfig& config, uint64_t seed) : config_(config), seed_(seed) {
  if (config_.stages.empty()) throw ConfigError("stages: nothing to run");
  torch::manual_seed(seed);
  bundle_ = std::make_unique<ModelBundle>(config_.model, training_options(config_));
  generator_opt_ = std::make_unique<Adam>(bundle_->generator_parameters(), config_.adam);
  if (bundle_->discriminator) {
    discriminator_opt_ = std::make_unique<Adam>(bundle_->discriminator_parameters(), config_.adam);
  }
  if (config_.ema) {
    torch::NoGradGuard no_grad;
    for (const auto& [name, p] : bundle_->autoencoder_parameters()) ema_[name] = p.detach().clone();
  }
}

void Trainer::update_ema() {
  if (!config_.ema) return;
  torch::NoGradGuard no_grad;
  ++ema_updates_;
  const double n = static_cast<double>(ema_updates_);
  const double decay = std::min(config_.ema_decay, (1.0 + n) / (10.0 + n));
  for (const auto& [name, p] : bundle_->autoencoder_parameters()) {
    ema_.at(name).mul_(decay).add_(p.detach(), 1.0 - decay);
  }
}

StepLog Trainer::step(size_t stage_index, int64_t stage_step, const Batch& batch) {
  const StageConfig& stage = config_.stages.at(stage_index);
  const LossWeights& w = stage.weights;
  const auto& q = bundle_->config().quantizer;
  const int64_t global_step = generator_opt_->steps_taken();
  auto gen = at::make_generator<at::CPUGeneratorImpl>(
      Rng::mix(Rng::mix(seed_, 0x6e6f697365ULL + stage_number(stage.name)), stage_step));

  const auto& images = batch.images;
  auto latent = bundle_->encode(images);
  auto grouped = group_reshape(latent, q);
  auto code = quantize(grouped);
  auto quantized = ungroup(straight_through(grouped, code));
  auto recon = bundle_->decoder->forward(quantized);

  LossTerms terms;
  terms.recon = reconstruction_loss(images, recon);
  if (w.alpha > 0.0) terms.commit = commitment_loss(grouped, code);
  if (w.delta > 0.0) {
    terms.token_entropy = token_entropy_loss(grouped, q);
    terms.codebook_entropy = codebook_entropy_loss(grouped, q);
  }
  if (w.beta > 0.0) terms.perceptual = perceptual_loss(images, recon, bundle_->perceptual.get());
  torch::Tensor disc_loss;
  if (w.gamma > 0.0 && bundle_->discriminator) {
    auto& d = bundle_->discriminator;
    if (global_step >= w.disc_start_step) {
      terms.gan_g = -d->forward(recon).mean();
      disc_loss = hinge_losses(d->forward(images), d->forward(recon.detach()), global_step,
                               w.disc_start_step)
                      .discriminator;
      terms.gan_d = disc_loss;
    } else {
      terms.gan_g = torch::zeros({}, recon.options());
      terms.gan_d = torch::zeros({}, recon.options());
    }
  }
  if (w.theta > 0.0 && (bundle_->pre_head || bundle_->post_head)) {
    auto target = bundle_->teacher->embed(images, batch.ids).to(latent.scalar_type());
    DistillArms arms = bundle_->config().arms;
    arms.eta = w.eta;
    auto ppd = ppd_loss(latent, quantized, target, bundle_->pre_head, bundle_->post_head, arms);
    if (arms.pre) terms.ppd_pre = ppd.pre;
    if (arms.post) terms.ppd_post = ppd.post;
  }
  if (w.mu > 0.0 && bundle_->prior) {
    terms.gap = gap_loss(flatten_tokens(quantized), bundle_->prior, gen).value;
  }

  auto assembled = total_loss(terms, w, global_step);
  generator_opt_->zero_grad();
  assembled.total.backward();
  generator_opt_->step();
  if (disc_loss.defined()) {
    discriminator_opt_->zero_grad();
    disc_loss.backward();
    discriminator_opt_->step();
  }
  update_ema();

  StepLog log;
  log.stage = stage.name;
  log.report = assembled.report;
  log.report.step = stage_step;
  log.learning_rate = generator_opt_->learning_rate();
  log.resolution = batch.resolution;
  return log;
}

std::vector<StepLog> Trainer::run_stage(size_t stage_index, const TrainOptions& options) {
  if (stage_index >= config_.stages.size()) throw ConfigError("stage index out of range");
  if (stage_index != stage_index_) {
    stage_index_ = stage_index;
    stage_step_ = 0;
  }
  const StageConfig& stage = config_.stages[stage_index];
  MultiResolutionBatcher batcher(stage.datasets, stage.resolutions, stage.batch_size,
                                 config_.model.backbone.downsample_factor(),
                                 Rng::mix(seed_, static_cast<uint64_t>(stage_number(stage.name))),
                                 stage.augmentation);
  std::ofstream log_file;
  if (!options.out_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(options.out_dir, ec);
    log_file.open(options.out_dir / "metrics.log", std::ios::app);
    if (!log_file) throw IoError("cannot write " + (options.out_dir / "metrics.log").string());
  }
  bundle_->train(true);
  std::vector<StepLog> logs;
  const int64_t start = stage_step_;
  while (stage_step_ < stage.steps) {
    if (options.stop_after >= 0 && stage_step_ - start >= options.stop_after) break;
    const double lr = stage.lr.at(stage_step_, stage.steps);
    generator_opt_->set_learning_rate(lr);
    if (discriminator_opt_) discriminator_opt_->set_learning_rate(lr);
    auto log = step(stage_index, stage_step_, batcher.batch(stage_step_));
    ++stage_step_;
    if (log_file.is_open()) log_file << log.to_line() << "\n";
    if (options.echo) *options.echo << log.to_line() << "\n";
    logs.push_back(std::move(log));
  }
  if (log_file.is_open()) {
    log_file.flush();
    if (!log_file) throw IoError("failed writing metrics log");
  }
  if (stage_step_ >= stage.steps) {
    if (!options.out_dir.empty()) save_checkpoint(options.out_dir / stage.name, checkpoint());
    if (stage_index + 1 < config_.stages.size()) {
      stage_index_ = stage_index + 1;
      stage_step_ = 0;
    }
  }
  if (!options.out_dir.empty()) save_checkpoint(options.out_dir / "latest", checkpoint());
  return logs;
}

std::vector<StepLog> Trainer::run_curriculum(const TrainOptions& options) {
  std::vector<StepLog> all;
  for (size_t i = stage_index_; i < config_.stages.size(); ++i) {
    const bool was_paused = options.stop_after >= 0;
    auto logs = run_stage(i, options);
    all.insert(all.end(), std::make_move_iterator(logs.begin()), std::make_move_iterator(logs.end()));
    const bool finished = i + 1 < config_.stages.size() ? stage_index_ == i + 1
                                                         : stage_step_ >= config_.stages[i].steps;
    if (was_paused && !finished) break;
  }
  return all;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ck;
  ck.config_text = config_.text();
  ck.seed = seed_;
  const auto& stage = config_.stages.at(stage_index_);
  ck.stage = stage.name;
  ck.stage_step = stage_step_;
  ck.stage_complete = stage_step_ >= stage.steps;
  for (const auto& [k, v] : bundle_->generator_parameters()) ck.tensors[k] = v.detach().clone();
  for (const auto& [k, v] : bundle_->discriminator_parameters()) ck.tensors[k] = v.detach().clone();
  for (const auto& [k, v] : generator_opt_->state()) ck.tensors["optimizer." + k] = v.clone();
  if (discriminator_opt_) {
    for (const auto& [k, v] : discriminator_opt_->state()) {
      ck.tensors["discriminator_optimizer." + k] = v.clone();
    }
  }
  for (const auto& [k, v] : ema_) ck.tensors["ema." + k] = v.clone();
  ck.tensors["ema_updates"] = torch::tensor({ema_updates_}, torch::kInt64);
  return ck;
}

void Trainer::restore(const Checkpoint& ck) {
  assign_tensors(ck.tensors, bundle_->generator_parameters(), "checkpoint");
  assign_tensors(ck.tensors, bundle_->discriminator_parameters(), "checkpoint");
  generator_opt_->load_state(ck.with_prefix("optimizer."));
  if (discriminator_opt_) discriminator_opt_->load_state(ck.with_prefix("discriminator_optimizer."));
  if (config_.ema) {
    auto shadow = ck.with_prefix("ema.");
    NamedTensors targets;
    for (auto& [k, v] : ema_) targets.emplace_back(k, v);
    assign_tensors(shadow, targets, "checkpoint EMA");
    auto it = ck.tensors.find("ema_updates");
    if (it == ck.tensors.end()) throw FormatError("checkpoint lacks ema_updates");
    ema_updates_ = it->second.item<int64_t>();
  }
  size_t index = config_.stages.size();
  for (size_t i = 0; i < config_.stages.size(); ++i) {
    if (config_.stages[i].name == ck.stage) index = i;
  }
  if (index == config_.stages.size()) {
    throw ConfigError("stages: checkpoint stage '" + ck.stage + "' is not part of this config");
  }
  stage_index_ = index;
  stage_step_ = ck.stage_step;
  if (ck.stage_complete && index + 1 < config_.stages.size()) {
    stage_index_ = index + 1;
    stage_step_ = 0;
  }
}

LoadedModel load_model(const std::filesystem::path& dir, bool use_ema) {
  LoadedModel out;
  out.checkpoint = load_checkpoint(dir);
  out.config = parse_config(out.checkpoint.config_text);
  BundleOptions options;
  const auto& teacher = out.config.model.teacher;
  options.load_teacher = teacher.enabled() && (teacher.synthetic() || !teacher.store.empty());
  options.pool_heads = options.load_teacher;
  options.prior = false;
  out.bundle = std::make_unique<ModelBundle>(out.config.model, options);
  NamedTensors targets = out.bundle->autoencoder_parameters();
  for (const auto& [k, v] : out.bundle->generator_parameters()) {
    if (k.starts_with("pre_head.") || k.starts_with("post_head.")) targets.emplace_back(k, v);
  }
  assign_tensors(out.checkpoint.tensors, targets, "checkpoint " + dir.string());
  if (use_ema && out.config.ema) {
    assign_tensors(out.checkpoint.with_prefix("ema."), out.bundle->autoencoder_parameters(),
                   "checkpoint EMA");
  }
  out.bundle->train(false);
  return out;
}

}  // namespace uniwetok
