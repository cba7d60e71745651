#include <torch/torch.h>

#include <optional>

#include "harness.hpp"
#include "uniwetok/config.hpp"
#include "uniwetok/curriculum.hpp"
#include "uniwetok/data.hpp"
#include "uniwetok/evalkit.hpp"
#include "uniwetok/generative_prior.hpp"

using namespace uniwetok;

namespace {

constexpr uint64_t kSeeds[] = {1, 2, 3};

// One fixed probe for every arm: same prior shape, data and budget.
PriorConfig probe_prior() {
  PriorConfig p;
  p.layers = 1;
  p.width = 64;
  p.heads = 2;
  p.query_token = true;
  return p;
}

double probe_loss(const RunConfig& cfg, uint64_t seed) {
  Trainer trainer(cfg, seed);
  trainer.run_curriculum({});
  std::optional<EmaSwap> swap;
  if (cfg.ema) swap.emplace(trainer.bundle(), trainer.ema());
  const int res = cfg.stages.back().resolutions.front();
  auto train_data = cfg.eval_data, val_data = cfg.eval_data;
  train_data.seed = Rng::mix(cfg.eval_data.seed, 1);
  val_data.seed = Rng::mix(cfg.eval_data.seed, 2);
  const auto train = token_sequences(trainer.bundle(), fixed_eval_set(train_data, 256, res));
  const auto val = token_sequences(trainer.bundle(), fixed_eval_set(val_data, 64, res));
  ProbeBudget budget;
  budget.steps = 300;
  budget.seed = 5;
  return probe_generability(train, val, probe_prior(), budget).final_val_loss();
}

double arm_mean(const acceptance::Context& ctx, const std::string& file, std::string& detail) {
  const auto cfg = load_config(ctx.configs / "acceptance" / file);
  double sum = 0.0;
  detail += file.substr(0, file.size() - 4) + " [";
  for (uint64_t s : kSeeds) {
    const double loss = probe_loss(cfg, s);
    detail += (s == kSeeds[0] ? "" : " ") + acceptance::fmt(loss, 4);
    sum += loss;
  }
  const double mean = sum / std::size(kSeeds);
  detail += "] mean " + acceptance::fmt(mean, 4) + "; ";
  return mean;
}

void run(const acceptance::Context& ctx, acceptance::Verdict& v) {
  std::string detail;
  const double query = arm_mean(ctx, "gap_query.cfg", detail);
  const double no_query = arm_mean(ctx, "gap_no_query.cfg", detail);
  const double none = arm_mean(ctx, "no_gap.cfg", detail);
  v.check(query <= no_query, "GAP+query above GAP without query: " + detail);
  v.check(query <= none, "GAP+query above no GAP: " + detail);
  v.note("probe val loss " + detail.substr(0, detail.size() - 2));
}

acceptance::Register reg(6, "generative-aware prior ordering", 1800.0, run);

}  // namespace
