#include "uniwetok/generative_prior.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "uniwetok/errors.hpp"
#include "uniwetok/optim.hpp"

namespace uniwetok {

void PriorConfig::validate() const {
  if (layers < 1 || width < 1 || heads < 1 || timestep_embedding_dim < 2) {
    throw ConfigError("prior layers, width, heads and timestep embedding dim must be positive");
  }
  if (width % heads != 0) throw ConfigError("prior width must be divisible by its head count");
  if (timestep_embedding_dim % 2 != 0) throw ConfigError("timestep embedding dim must be even");
}

torch::Tensor flatten_tokens(const torch::Tensor& grid) {
  if (grid.dim() != 4) throw ValidationError("flatten expects a [B, h, w, d] grid");
  return grid.reshape({grid.size(0), grid.size(1) * grid.size(2), grid.size(3)});
}

torch::Tensor unflatten_tokens(const torch::Tensor& sequence, int64_t height, int64_t width) {
  if (sequence.dim() != 3 || sequence.size(1) != height * width) {
    std::ostringstream msg;
    msg << "sequence length " << (sequence.dim() == 3 ? sequence.size(1) : -1)
        << " does not match h*w = " << height * width;
    throw ValidationError(msg.str());
  }
  return sequence.reshape({sequence.size(0), height, width, sequence.size(2)});
}

torch::Tensor timestep_embedding(const torch::Tensor& t, int64_t dim) {
  const int64_t half = dim / 2;
  auto freq = torch::exp(torch::arange(half, t.options()) *
                         (-std::log(10000.0) / static_cast<double>(half)));
  auto angles = (1000.0 * t).unsqueeze(1) * freq.unsqueeze(0);
  return torch::cat({torch::sin(angles), torch::cos(angles)}, 1);
}

namespace {

torch::Tensor position_encoding_1d(int64_t length, int64_t dim, const torch::TensorOptions& opts) {
  const int64_t half = dim / 2;
  auto freq = torch::exp(torch::arange(half, opts.dtype(torch::kFloat64)) *
                         (-std::log(10000.0) / static_cast<double>(std::max<int64_t>(half, 1))));
  auto angles = torch::arange(length, opts.dtype(torch::kFloat64)).unsqueeze(1) * freq;
  auto enc = torch::cat({torch::sin(angles), torch::cos(angles)}, 1);
  if (enc.size(1) < dim) enc = torch::cat({enc, torch::zeros({length, 1}, enc.options())}, 1);
  return enc.to(opts.dtype());
}

void check_time(const torch::Tensor& t) {
  if (t.numel() == 0) return;
  const double lo = t.min().item<double>();
  const double hi = t.max().item<double>();
  if (lo < 0.0 || hi > 1.0 || std::isnan(lo) || std::isnan(hi)) {
    throw ValidationError("diffusion time t must lie in [0, 1]");
  }
}

}  // namespace

PriorImpl::PriorImpl(const PriorConfig& config, int token_width)
    : config_(config), token_width_(token_width) {
  config.validate();
  if (config.query_token) {
    auto q = torch::empty({1, 1, config.width}, nn::param_options());
    if (!q.is_meta()) {
      torch::NoGradGuard no_grad;
      q.normal_(0.0, 0.02);
    }
    query = register_parameter("query", q);
  }
  token_in = register_module("token_in", nn::Linear(token_width, config.width));
  noise_in = register_module("noise_in", nn::Linear(token_width, config.width));
  time1 = register_module("time1", nn::Linear(config.timestep_embedding_dim, config.width));
  time2 = register_module("time2", nn::Linear(config.width, config.width));
  blocks = register_module("blocks", torch::nn::ModuleList());
  for (int i = 0; i < config.layers; ++i) {
    blocks->push_back(nn::TransformerBlock(config.width, config.heads));
  }
  norm = register_module("norm", nn::LayerNorm(config.width));
  head = register_module("head", nn::Linear(config.width, token_width));
}

torch::Tensor PriorImpl::predict(const torch::Tensor& context, const torch::Tensor& noised,
                                 const torch::Tensor& t) {
  check_time(t);
  const int64_t batch = noised.size(0);
  const int64_t slots = noised.size(1);
  torch::Tensor seq;
  if (config_.query_token) {
    auto q = query.to(noised.scalar_type()).expand({batch, 1, config_.width});
    seq = context.size(1) > 0 ? torch::cat({q, token_in->forward(context)}, 1) : q;
  } else {
    seq = token_in->forward(context);
  }
  if (seq.size(1) != slots) {
    throw ValidationError("prior context and noised channel lengths disagree");
  }
  auto temb = time2->forward(
      torch::silu(time1->forward(timestep_embedding(t.to(noised.scalar_type()),
                                                    config_.timestep_embedding_dim))));
  auto h = seq + noise_in->forward(noised) + temb.unsqueeze(1) +
           position_encoding_1d(slots, config_.width, noised.options());
  auto allowed = torch::ones({slots, slots}, torch::kBool).tril();
  for (const auto& block : *blocks) h = block->as<nn::TransformerBlock>()->forward(h, allowed);
  return head->forward(norm->forward(h));
}

torch::Tensor PriorImpl::forward(const torch::Tensor& targets, const torch::Tensor& noise,
                                 const torch::Tensor& t) {
  if (targets.dim() != 3 || targets.size(2) != token_width_) {
    throw ValidationError("prior expects token sequences [B, L, " +
                          std::to_string(token_width_) + "]");
  }
  if (noise.sizes() != targets.sizes()) throw ValidationError("noise shape differs from targets");
  check_time(t);
  const int64_t length = targets.size(1);
  auto tb = t.to(targets.scalar_type()).view({-1, 1, 1});
  auto z = (1.0 - tb) * targets + tb * noise.to(targets.scalar_type());
  auto context = targets.slice(1, 0, length - 1);
  if (config_.query_token) return predict(context, z, t);
  if (length < 2) throw ValidationError("without a query token the sequence needs length >= 2");
  return predict(context, z.slice(1, 1, length), t);
}

GapLoss gap_loss(const torch::Tensor& targets, Prior& prior, const torch::Tensor& noise,
                 const torch::Tensor& t) {
  auto pred = prior->forward(targets, noise, t);
  const int64_t length = targets.size(1);
  const bool query = prior->config().query_token;
  auto supervised_targets = query ? targets : targets.slice(1, 1, length);
  auto err = (pred - supervised_targets).pow(2);
  GapLoss out;
  out.value = err.mean();
  auto per = err.mean({0, 2});
  out.supervised = torch::ones({length}, torch::kBool);
  if (!query) {
    out.supervised[0] = false;
    per = torch::cat({torch::zeros({1}, per.options()), per});
  }
  out.per_position = per;
  return out;
}

GapLoss gap_loss(const torch::Tensor& targets, Prior& prior, at::Generator& generator) {
  auto noise = torch::randn(targets.sizes(), generator, targets.options().requires_grad(false));
  auto t = torch::rand({targets.size(0)}, generator, targets.options().requires_grad(false));
  return gap_loss(targets, prior, noise, t);
}

ProbeCurve probe_generability(const torch::Tensor& train_tokens, const torch::Tensor& val_tokens,
                              const PriorConfig& config, const ProbeBudget& budget) {
  if (train_tokens.dim() != 3 || train_tokens.size(0) == 0) {
    throw ValidationError("probe needs a nonempty [N, L, d] training token set");
  }
  if (val_tokens.dim() != 3 || val_tokens.size(0) == 0) {
    throw ValidationError("probe needs a nonempty [N, L, d] validation token set");
  }
  torch::manual_seed(budget.seed);
  Prior prior(config, static_cast<int>(train_tokens.size(2)));
  std::vector<std::pair<std::string, torch::Tensor>> params;
  for (const auto& item : prior->named_parameters()) params.emplace_back(item.key(), item.value());
  Adam opt(params, AdamOptions{budget.learning_rate, 0.9, 0.99, 1e-8, 0.0});

  auto train = train_tokens.detach().to(torch::kFloat32);
  auto val = val_tokens.detach().to(torch::kFloat32);
  auto gen = at::make_generator<at::CPUGeneratorImpl>(budget.seed * 2654435761ULL + 17);

  // Fixed validation draws, identical at every evaluation.
  std::vector<std::pair<torch::Tensor, torch::Tensor>> val_draws;
  {
    auto vgen = at::make_generator<at::CPUGeneratorImpl>(budget.seed + 99991);
    for (int i = 0; i < budget.validation_draws; ++i) {
      val_draws.emplace_back(torch::randn(val.sizes(), vgen), torch::rand({val.size(0)}, vgen));
    }
  }
  auto validate = [&] {
    torch::NoGradGuard no_grad;
    double total = 0.0;
    for (const auto& [noise, t] : val_draws) {
      total += gap_loss(val, prior, noise, t).value.item<double>();
    }
    return total / static_cast<double>(val_draws.size());
  };

  ProbeCurve curve;
  double running = 0.0;
  int running_count = 0;
  curve.records.push_back({0, std::nan(""), validate()});
  for (int step = 1; step <= budget.steps; ++step) {
    auto idx = torch::randint(train.size(0), {std::min<int64_t>(budget.batch_size, train.size(0))},
                              gen, torch::kInt64);
    auto batch = train.index_select(0, idx);
    auto loss = gap_loss(batch, prior, gen).value;
    opt.zero_grad();
    loss.backward();
    opt.step();
    running += loss.item<double>();
    ++running_count;
    if (step % budget.eval_every == 0 || step == budget.steps) {
      curve.records.push_back({step, running / running_count, validate()});
      running = 0.0;
      running_count = 0;
    }
  }
  return curve;
}

void write_probe_curve(const ProbeCurve& curve, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write probe curve " + path.string());
  out << std::setprecision(9);
  for (const auto& r : curve.records) {
    out << "step=" << r.step << " train_loss=" << r.train_loss << " val_loss=" << r.val_loss
        << "\n";
  }
}

torch::Tensor sample_sequence(Prior& prior, int64_t batch, int64_t length, int steps,
                              at::Generator& generator) {
  if (steps < 1) throw ValidationError("sampling needs steps >= 1");
  if (length < 1) throw ValidationError("sampling needs length >= 1");
  torch::NoGradGuard no_grad;
  const int64_t d = prior->token_width();
  const bool query = prior->config().query_token;
  auto tokens = torch::zeros({batch, length, d});
  int64_t first = 0;
  if (!query) {
    tokens.select(1, 0).copy_(torch::where(torch::randn({batch, d}, generator) >= 0, 1.0, -1.0));
    first = 1;
  }
  for (int64_t i = first; i < length; ++i) {
    auto context = tokens.slice(1, 0, i);
    const int64_t prev_slots = query ? i : i - 1;  // slots before the current one
    auto z = torch::randn({batch, d}, generator);
    torch::Tensor x0;
    for (int s = 0; s < steps; ++s) {
      const double t = 1.0 - static_cast<double>(s) / steps;
      const double t_next = 1.0 - static_cast<double>(s + 1) / steps;
      auto tt = torch::full({batch}, t);
      auto earlier = tokens.slice(1, query ? 0 : 1, i);
      auto eps_prev = torch::randn({batch, prev_slots, d}, generator);
      auto noised = torch::cat({(1.0 - t) * earlier + t * eps_prev, z.unsqueeze(1)}, 1);
      x0 = prior->predict(context, noised, tt).select(1, prev_slots);
      auto eps_hat = (z - (1.0 - t) * x0) / t;
      z = (1.0 - t_next) * x0 + t_next * eps_hat;
    }
    tokens.select(1, i).copy_(torch::where(x0 >= 0, 1.0, -1.0));
  }
  return tokens;
}

}  // namespace uniwetok
