// uniwetok: train, tokenize, detokenize, eval, probe and report.
//
// Exit codes: 0 success, 2 bad config / inputs / file format, 3 a loss term
// went non-finite during training, 1 anything else.

#include <CLI11.hpp>
#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "uniwetok/config.hpp"
#include "uniwetok/curriculum.hpp"
#include "uniwetok/data.hpp"
#include "uniwetok/errors.hpp"
#include "uniwetok/evalkit.hpp"
#include "uniwetok/generative_prior.hpp"
#include "uniwetok/image_io.hpp"
#include "uniwetok/token_file.hpp"

namespace fs = std::filesystem;
using namespace uniwetok;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitNonFinite = 3;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

void require_dir(const fs::path& dir, const std::string& what) {
  if (!fs::is_directory(dir)) throw IoError(what + " not found: " + dir.string());
}

void check_divisible(const torch::Tensor& image, int factor) {
  const char* names[] = {"height", "width"};
  for (int d = 0; d < 2; ++d) {
    if (image.size(d) % factor != 0) {
      throw ValidationError("image " + std::string(names[d]) + " " + std::to_string(image.size(d)) +
                            " is not divisible by the downsample factor " + std::to_string(factor));
    }
  }
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string out;
  std::string resume;
  std::optional<uint64_t> seed;
  int64_t stop_after = -1;
  bool quiet = false;
  bool skip_eval = false;
};

int cmd_train(const TrainArgs& a) {
  RunConfig config;
  std::optional<Checkpoint> resume;
  if (!a.resume.empty()) {
    require_dir(a.resume, "checkpoint");
    resume = load_checkpoint(a.resume);
  }
  if (!a.config.empty()) {
    config = load_config(a.config);
  } else if (resume) {
    config = parse_config(resume->config_text);
  } else {
    throw ConfigError("train needs --config or --resume");
  }
  if (resume && resume->config_text != config.text()) {
    throw ConfigError("--resume checkpoint was written by a different config");
  }
  const uint64_t seed = a.seed ? *a.seed : resume ? resume->seed : config.seed;
  if (resume && seed != resume->seed) {
    throw ConfigError("--seed " + std::to_string(seed) + " differs from the checkpoint seed " +
                      std::to_string(resume->seed));
  }
  const fs::path out = a.out;
  fs::create_directories(out);
  write_text(out / "config.cfg", config.text());

  Trainer trainer(config, seed);
  if (resume) trainer.restore(*resume);
  TrainOptions options;
  options.out_dir = out;
  options.echo = a.quiet ? nullptr : &std::cout;
  options.stop_after = a.stop_after;
  trainer.run_curriculum(options);

  const bool finished = trainer.stage_index() + 1 == config.stages.size() &&
                        trainer.stage_step() >= config.stages.back().steps;
  if (finished && !a.skip_eval) {
    EvalSpec spec;
    spec.data = config.eval_data;
    spec.samples = config.eval_samples;
    spec.resolution = config.eval_resolution > 0 ? config.eval_resolution
                                                 : config.stages.back().resolutions.front();
    spec.prototypes = config.eval_data;
    spec.prototypes.seed = Rng::mix(config.eval_data.seed, 0x70726f746fULL);
    auto& bundle = trainer.bundle();
    std::optional<EmaSwap> swap;
    if (config.ema) swap.emplace(bundle, trainer.ema());
    auto report = evaluate(bundle, spec, config.fingerprint());
    write_report(out, report);
    if (!a.quiet) std::cout << report.to_text();
  }
  return 0;
}

// --- tokenize / detokenize ---------------------------------------------------

int cmd_tokenize(const std::string& checkpoint, const std::string& image_path, const std::string& out,
                 bool use_ema) {
  require_dir(checkpoint, "checkpoint");
  auto model = load_model(checkpoint, use_ema);
  auto image = read_png(image_path);
  check_divisible(image, model.config.model.backbone.downsample_factor());
  torch::NoGradGuard no_grad;
  auto code = model.bundle->tokenize(image.unsqueeze(0));
  auto file = TokenFile::from_ids(code.ids[0], model.config.model.quantizer.bits_per_group);
  write_token_file(out, file);
  std::cout << "tokens=" << file.height << "x" << file.width << "x" << int(file.groups)
            << " bits=" << int(file.bits_per_group) << " bytes=" << kTokenHeaderBytes + file.payload_bytes()
            << "\n";
  return 0;
}

int cmd_detokenize(const std::string& checkpoint, const std::string& tokens, const std::string& out,
                   bool use_ema) {
  require_dir(checkpoint, "checkpoint");
  auto file = read_token_file(tokens);
  auto model = load_model(checkpoint, use_ema);
  const auto& q = model.config.model.quantizer;
  if (file.groups != q.groups || file.bits_per_group != q.bits_per_group) {
    throw FormatError("token file has g=" + std::to_string(file.groups) + " d'=" +
                      std::to_string(file.bits_per_group) + ", model expects g=" +
                      std::to_string(q.groups) + " d'=" + std::to_string(q.bits_per_group));
  }
  torch::NoGradGuard no_grad;
  auto image = model.bundle->detokenize(file.to_ids().unsqueeze(0))[0];
  write_png(out, image);
  return 0;
}

// --- eval ----------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string out;
  std::string data;
  int samples = 0;
  int resolution = 0;
  std::optional<uint64_t> seed;
  bool no_ema = false;
  bool no_frechet = false;
};

int cmd_eval(const EvalArgs& a) {
  require_dir(a.checkpoint, "checkpoint");
  auto model = load_model(a.checkpoint, !a.no_ema);
  const auto& config = model.config;
  EvalSpec spec;
  spec.data = a.data.empty() ? config.eval_data : DatasetSpec::parse(a.data);
  if (a.seed) spec.data.seed = *a.seed;
  spec.samples = a.samples > 0 ? a.samples : config.eval_samples;
  spec.resolution = a.resolution > 0 ? a.resolution
                    : config.eval_resolution > 0 ? config.eval_resolution
                                                 : config.stages.back().resolutions.front();
  check_divisible(torch::empty({spec.resolution, spec.resolution}),
                  config.model.backbone.downsample_factor());
  spec.frechet = !a.no_frechet;
  spec.prototypes = spec.data;
  spec.prototypes.seed = Rng::mix(spec.data.seed, 0x70726f746fULL);
  auto report = evaluate(*model.bundle, spec, config.fingerprint());
  const fs::path out = a.out;
  write_report(out, report);
  write_text(out / "config.cfg", config.text());
  std::cout << report.to_text();
  return 0;
}

// --- probe -----------------------------------------------------------------

struct ProbeArgs {
  std::string checkpoint;
  std::string out;
  std::string data;
  std::string prior;
  int train_samples = 256;
  int val_samples = 64;
  int resolution = 0;
  int steps = 300;
  int batch_size = 16;
  double lr = 1e-3;
  int eval_every = 50;
  uint64_t seed = 0;
  bool no_ema = false;
};

int cmd_probe(const ProbeArgs& a) {
  require_dir(a.checkpoint, "checkpoint");
  auto model = load_model(a.checkpoint, !a.no_ema);
  const auto& config = model.config;
  DatasetSpec data = a.data.empty() ? config.eval_data : DatasetSpec::parse(a.data);
  const int resolution = a.resolution > 0 ? a.resolution : config.stages.back().resolutions.front();
  check_divisible(torch::empty({resolution, resolution}), config.model.backbone.downsample_factor());

  PriorConfig prior = !a.prior.empty()               ? prior_preset(a.prior)
                      : config.model.prior_enabled() ? config.model.prior
                                                     : PriorConfig{};
  DatasetSpec train_data = data, val_data = data;
  train_data.seed = Rng::mix(a.seed, 1);
  val_data.seed = Rng::mix(a.seed, 2);
  auto train = token_sequences(*model.bundle, fixed_eval_set(train_data, a.train_samples, resolution));
  auto val = token_sequences(*model.bundle, fixed_eval_set(val_data, a.val_samples, resolution));

  ProbeBudget budget;
  budget.steps = a.steps;
  budget.batch_size = a.batch_size;
  budget.learning_rate = a.lr;
  budget.eval_every = a.eval_every;
  budget.seed = a.seed;
  auto curve = probe_generability(train, val, prior, budget);
  fs::create_directories(a.out);
  write_probe_curve(curve, fs::path(a.out) / "probe.txt");
  std::cout << "final_val_loss=" << curve.final_val_loss() << "\n";
  return 0;
}

// --- report ------------------------------------------------------------------

int cmd_report(const std::vector<std::string>& runs, const std::string& out) {
  std::vector<fs::path> dirs;
  for (const auto& r : runs) {
    require_dir(r, "run directory");
    dirs.emplace_back(r);
  }
  const auto table = ablation_report(dirs);
  if (!out.empty()) {
    fs::create_directories(out);
    write_text(fs::path(out) / "ablation.txt", table);
  }
  std::cout << table;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"UniWeTok desk-scale tokenizer"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "Intra-op threads (1 keeps runs bit-reproducible)")
      ->check(CLI::PositiveNumber);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Run the training curriculum");
  t->add_option("--config", train.config, "Run config file");
  t->add_option("--out", train.out, "Output directory")->required();
  t->add_option("--resume", train.resume, "Checkpoint directory to continue from");
  t->add_option("--seed", train.seed, "Overrides the config seed");
  t->add_option("--stop-after", train.stop_after, "Pause after this many steps");
  t->add_flag("--quiet", train.quiet, "Do not echo metrics lines");
  t->add_flag("--skip-eval", train.skip_eval, "No final evaluation report");

  std::string ckpt, input, output;
  bool no_ema = false;
  auto* tok = app.add_subcommand("tokenize", "Image -> token file");
  tok->add_option("--checkpoint", ckpt)->required();
  tok->add_option("--image", input)->required();
  tok->add_option("--out", output)->required();
  tok->add_flag("--no-ema", no_ema, "Use raw weights instead of EMA");
  tok->add_option("--seed", "Accepted for uniformity; tokenization is deterministic");

  auto* detok = app.add_subcommand("detokenize", "Token file -> image");
  detok->add_option("--checkpoint", ckpt)->required();
  detok->add_option("--tokens", input)->required();
  detok->add_option("--out", output)->required();
  detok->add_flag("--no-ema", no_ema, "Use raw weights instead of EMA");
  detok->add_option("--seed", "Accepted for uniformity; detokenization is deterministic");

  EvalArgs eval;
  auto* ev = app.add_subcommand("eval", "Reconstruction metrics on a fixed eval set");
  ev->add_option("--checkpoint", eval.checkpoint)->required();
  ev->add_option("--out", eval.out)->required();
  ev->add_option("--data", eval.data, "Dataset spec, e.g. synthetic-glyph:5");
  ev->add_option("--samples", eval.samples);
  ev->add_option("--resolution", eval.resolution);
  ev->add_option("--seed", eval.seed, "Eval set seed");
  ev->add_flag("--no-ema", eval.no_ema);
  ev->add_flag("--no-frechet", eval.no_frechet);

  ProbeArgs probe;
  auto* pr = app.add_subcommand("probe", "Train a fresh prior on frozen tokens");
  pr->add_option("--checkpoint", probe.checkpoint)->required();
  pr->add_option("--out", probe.out)->required();
  pr->add_option("--data", probe.data);
  pr->add_option("--prior", probe.prior, "Prior preset (desk, BitDance-T)");
  pr->add_option("--train-samples", probe.train_samples);
  pr->add_option("--val-samples", probe.val_samples);
  pr->add_option("--resolution", probe.resolution);
  pr->add_option("--steps", probe.steps);
  pr->add_option("--batch-size", probe.batch_size);
  pr->add_option("--lr", probe.lr);
  pr->add_option("--eval-every", probe.eval_every);
  pr->add_option("--seed", probe.seed);
  pr->add_flag("--no-ema", probe.no_ema);

  std::vector<std::string> runs;
  std::string report_out;
  auto* rep = app.add_subcommand("report", "Ablation table over run directories");
  rep->add_option("runs", runs)->required();
  rep->add_option("--out", report_out);
  rep->add_option("--seed", "Accepted for uniformity; reports are deterministic");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInput;
  }

  torch::set_num_threads(threads);
  try {
    if (*t) return cmd_train(train);
    if (*tok) return cmd_tokenize(ckpt, input, output, !no_ema);
    if (*detok) return cmd_detokenize(ckpt, input, output, !no_ema);
    if (*ev) return cmd_eval(eval);
    if (*pr) return cmd_probe(probe);
    if (*rep) return cmd_report(runs, report_out);
  } catch (const TrainingError& e) {
    std::cerr << "error: non-finite loss term '" << e.term() << "' at step " << e.step() << ": "
              << e.what() << "\n";
    return kExitNonFinite;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitInput;
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitInput;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitInput;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitInput;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
