#include <torch/torch.h>

#include <algorithm>

#include "harness.hpp"
#include "oracles.hpp"
#include "uniwetok/backbone.hpp"
#include "uniwetok/generative_prior.hpp"
#include "uniwetok/objective.hpp"
#include "uniwetok/quantizer.hpp"
#include "uniwetok/semantic_distill.hpp"

using namespace uniwetok;

namespace {

constexpr double kTolerance = 1e-4;

// Latent values bounded away from zero so a central difference never flips a sign.
torch::Tensor latent(std::vector<int64_t> shape) {
  auto mag = torch::rand(shape, torch::kFloat64) * 0.9 + 0.05;
  auto sign = torch::randint(0, 2, shape, torch::kFloat64) * 2 - 1;
  return (mag * sign).requires_grad_(true);
}

class Tally {
 public:
  explicit Tally(acceptance::Verdict& v) : v_(v) {}
  void add(const std::string& what, const oracle::GradCheck& r) {
    v_.check(r.max_rel_error < kTolerance, what + " rel err " + acceptance::fmt(r.max_rel_error));
    worst_ = std::max(worst_, r.max_rel_error);
    entries_ += r.checked;
  }
  void params(const std::string& what, torch::nn::Module& m, const std::function<torch::Tensor()>& loss,
              int64_t per_tensor = 8) {
    for (auto& p : m.named_parameters()) add(what + "." + p.key(), oracle::check_gradient(p.value(), loss, 1e-5, per_tensor));
  }
  void finish() {
    v_.note(std::to_string(entries_) + " entries, max rel err " + acceptance::fmt(worst_, 3));
  }

 private:
  acceptance::Verdict& v_;
  double worst_ = 0.0;
  int64_t entries_ = 0;
};

void run(const acceptance::Context&, acceptance::Verdict& v) {
  torch::manual_seed(11);
  Tally tally(v);

  // Quantizer-side terms directly on the latent.
  for (bool on : {true, false}) {
    QuantizerConfig q;
    q.groups = 2;
    q.bits_per_group = 3;
    q.siglu = on;
    q.entropy_temperature = 0.7;
    auto u = latent({2, 3, 3, 2, 3});
    const std::string tag = on ? "[siglu]" : "[plain]";
    tally.add("token_entropy" + tag, oracle::check_gradient(u, [&] { return token_entropy_loss(u, q); }));
    tally.add("codebook_entropy" + tag, oracle::check_gradient(u, [&] { return codebook_entropy_loss(u, q); }));
  }
  {
    auto u = latent({2, 3, 3, 2, 4});
    tally.add("commitment", oracle::check_gradient(u, [&] { return commitment_loss(u, quantize(u)); }));
    auto images = torch::rand({2, 8, 8, 3}, torch::kFloat64) * 2 - 1;
    auto recon = (torch::rand({2, 8, 8, 3}, torch::kFloat64) * 2 - 1).requires_grad_(true);
    tally.add("reconstruction", oracle::check_gradient(recon, [&] { return reconstruction_loss(images, recon); }));
  }

  // Pre/post distillation through both head kinds.
  for (auto kind : {PoolKind::attention, PoolKind::linear}) {
    const std::string tag = kind == PoolKind::attention ? "[attention]" : "[linear]";
    PoolHead pre(8, 6, kind, 2, 16), post(8, 6, kind, 2, 16);
    pre->to(torch::kFloat64);
    post->to(torch::kFloat64);
    auto u = latent({2, 3, 3, 8});
    auto signs = u.detach().sign();
    auto teacher = torch::randn({2, 6}, torch::kFloat64);
    DistillArms both{true, true, 0.5};
    auto loss = [&] { return ppd_loss(u, signs, teacher, pre, post, both).total; };
    tally.params("pre_head" + tag, *pre, loss);
    tally.params("post_head" + tag, *post, loss);
    DistillArms pre_only{true, false, 1.0};
    tally.add("ppd_pre.latent" + tag,
              oracle::check_gradient(u, [&] { return ppd_loss(u, signs, teacher, pre, post, pre_only).total; }));
  }

  // Generative-aware prior, with and without the query token.
  for (bool query : {true, false}) {
    const std::string tag = query ? "[query]" : "[no-query]";
    PriorConfig pc;
    pc.layers = 1;
    pc.width = 16;
    pc.heads = 2;
    pc.timestep_embedding_dim = 8;
    pc.query_token = query;
    Prior prior(pc, 6);
    prior->to(torch::kFloat64);
    auto targets = (torch::randn({2, 5, 6}, torch::kFloat64)).requires_grad_(true);
    auto noise = torch::randn({2, 5, 6}, torch::kFloat64);
    auto t = torch::rand({2}, torch::kFloat64);
    auto loss = [&] { return gap_loss(targets, prior, noise, t).value; };
    tally.add("gap.targets" + tag, oracle::check_gradient(targets, loss));
    tally.params("prior" + tag, *prior, loss, 4);
  }

  // End-to-end toy tokenizer: encoder -> quantizer (straight-through) -> decoder.
  {
    BackboneConfig b;
    b.base_channel = 4;
    b.channel_mult = {1, 2};
    b.num_res_blocks = 1;
    b.num_attn_blocks = 1;
    b.latent_width = 8;
    Encoder enc(b);
    Decoder dec(b);
    enc->to(torch::kFloat64);
    dec->to(torch::kFloat64);
    int64_t params = 0;
    for (const auto& p : enc->parameters()) params += p.numel();
    v.check(params <= 5000, "toy encoder has " + std::to_string(params) + " parameters");

    QuantizerConfig q;
    q.groups = 2;
    q.bits_per_group = 4;
    auto images = torch::rand({2, 8, 8, 3}, torch::kFloat64) * 2 - 1;
    auto teacher = torch::randn({2, 6}, torch::kFloat64);
    PoolHead pre(8, 6, PoolKind::attention, 2, 16), post(8, 6, PoolKind::linear);
    pre->to(torch::kFloat64);
    post->to(torch::kFloat64);

    // The straight-through forward is piecewise constant in the encoder
    // weights, so finite differences run on its linearization: the latent plus
    // the sign offset frozen at the base point. The analytic pass goes through
    // the library's straight-through estimator.
    torch::Tensor offset;
    {
      torch::NoGradGuard ng;
      auto g0 = group_reshape(enc->forward(images), q);
      offset = quantize(g0).signs - g0;
    }
    int calls = 0;
    auto loss = [&] {
      auto flat = enc->forward(images);
      auto grouped = group_reshape(flat, q);
      auto st = calls++ == 0 ? straight_through(grouped, quantize(grouped)) : grouped + offset;
      auto recon = dec->forward(ungroup(st));
      auto ppd = ppd_loss(flat, ungroup(st), teacher, pre, post, DistillArms{true, true, 1.0});
      return reconstruction_loss(images, recon) + 0.1 * (token_entropy_loss(grouped, q) + codebook_entropy_loss(grouped, q)) +
             ppd.total;
    };
    for (auto& p : enc->named_parameters()) {
      calls = 0;
      tally.add("end_to_end.encoder." + p.key(), oracle::check_gradient(p.value(), loss, 1e-5, 8));
    }
    v.note("toy encoder " + std::to_string(params) + " params");
  }
  tally.finish();
}

acceptance::Register reg(2, "finite-difference gradients", 120.0, run);

}  // namespace
