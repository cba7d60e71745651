#include "uniwetok/objective.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "uniwetok/errors.hpp"

namespace uniwetok {

void LossWeights::validate(bool siglu_enabled) const {
  const std::pair<const char*, double> all[] = {{"alpha", alpha}, {"beta", beta},
                                                {"gamma", gamma}, {"delta", delta},
                                                {"theta", theta}, {"mu", mu},
                                                {"eta", eta}};
  for (const auto& [name, value] : all) {
    if (!(value >= 0.0) || !std::isfinite(value)) {
      throw ConfigError(std::string(name) + " must be a finite nonnegative weight");
    }
  }
  if (disc_start_step < 0) throw ConfigError("disc start step must be >= 0");
  if (siglu_enabled && alpha != 0.0) {
    throw ConfigError(
        "alpha must be 0 when SigLu activation is enabled (the token entropy loss replaces the "
        "commitment term); got alpha = " + std::to_string(alpha));
  }
}

std::string LossReport::to_line() const {
  std::ostringstream out;
  out << std::setprecision(9) << "step=" << step << " total=" << total;
  for (const auto& name : loss_term_names()) {
    auto it = terms.find(name);
    out << " " << name << "=" << (it == terms.end() ? 0.0 : it->second);
  }
  return out.str();
}

double LossReport::reconstitute(const LossWeights& w) const {
  auto term = [&](const char* name) {
    auto it = terms.find(name);
    return it == terms.end() ? 0.0 : it->second;
  };
  return term("recon") + w.alpha * term("commit") + w.beta * term("perceptual") +
         w.gamma * term("gan_g") + w.delta * (term("token_entropy") + term("codebook_entropy")) +
         w.theta * (term("ppd_pre") + w.eta * term("ppd_post")) + w.mu * term("gap");
}

AssembledLoss total_loss(const LossTerms& t, const LossWeights& w, int64_t step) {
  if (!t.recon.defined()) throw InternalError("reconstruction term is required");
  AssembledLoss out;
  out.report.step = step;
  const std::pair<const char*, const torch::Tensor*> named[] = {
      {"recon", &t.recon},       {"commit", &t.commit},
      {"perceptual", &t.perceptual}, {"gan_g", &t.gan_g},
      {"gan_d", &t.gan_d},       {"token_entropy", &t.token_entropy},
      {"codebook_entropy", &t.codebook_entropy}, {"ppd_pre", &t.ppd_pre},
      {"ppd_post", &t.ppd_post}, {"gap", &t.gap}};
  for (const auto& [name, tensor] : named) {
    double value = 0.0;
    if (tensor->defined()) {
      value = tensor->detach().item<double>();
      if (!std::isfinite(value)) {
        throw TrainingError(name, step,
                            "non-finite " + std::string(name) + " loss at step " +
                                std::to_string(step));
      }
    }
    out.report.terms[name] = value;
  }
  auto total = t.recon;
  auto add = [&](double weight, const torch::Tensor& term) {
    if (weight != 0.0 && term.defined()) total = total + weight * term;
  };
  add(w.alpha, t.commit);
  add(w.beta, t.perceptual);
  add(w.gamma, t.gan_g);
  add(w.delta, t.token_entropy);
  add(w.delta, t.codebook_entropy);
  add(w.theta, t.ppd_pre);
  add(w.theta * w.eta, t.ppd_post);
  add(w.mu, t.gap);
  out.total = total;
  out.report.total = total.detach().item<double>();
  if (!std::isfinite(out.report.total)) {
    throw TrainingError("total", step, "non-finite total loss at step " + std::to_string(step));
  }
  return out;
}

torch::Tensor reconstruction_loss(const torch::Tensor& images, const torch::Tensor& recon) {
  if (images.sizes() != recon.sizes()) {
    std::ostringstream msg;
    msg << "reconstruction shape " << recon.sizes() << " differs from input " << images.sizes();
    throw ValidationError(msg.str());
  }
  return (images - recon).pow(2).mean();
}

PerceptualNet::PerceptualNet(uint64_t seed) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  const int64_t widths[] = {3, 16, 32, 32};
  for (int i = 0; i < 3; ++i) {
    const double fan_in = static_cast<double>(widths[i] * 9);
    weights_.push_back(torch::randn({widths[i + 1], widths[i], 3, 3}, gen) / std::sqrt(fan_in));
  }
}

std::vector<torch::Tensor> PerceptualNet::features(const torch::Tensor& images) const {
  std::vector<torch::Tensor> out;
  auto h = images.permute({0, 3, 1, 2});
  for (size_t i = 0; i < weights_.size(); ++i) {
    const int64_t stride = i == 0 ? 1 : 2;
    h = torch::relu(torch::conv2d(h, weights_[i].to(h.scalar_type()), {}, stride, 1));
    out.push_back(h);
  }
  return out;
}

torch::Tensor PerceptualNet::descriptor(const torch::Tensor& images) const {
  std::vector<torch::Tensor> pooled;
  for (const auto& f : features(images)) pooled.push_back(f.mean({2, 3}));
  return torch::cat(pooled, 1);
}

torch::Tensor perceptual_loss(const torch::Tensor& images, const torch::Tensor& recon,
                              const PerceptualNet* net) {
  if (!net) throw ConfigError("perceptual loss weight is positive but no feature net is set");
  auto fa = net->features(images);
  auto fb = net->features(recon);
  torch::Tensor total = torch::zeros({}, images.options());
  for (size_t i = 0; i < fa.size(); ++i) {
    auto na = fa[i] / (fa[i].pow(2).sum(1, true).sqrt() + 1e-10);
    auto nb = fb[i] / (fb[i].pow(2).sum(1, true).sqrt() + 1e-10);
    total = total + (na - nb).pow(2).sum(1).mean();
  }
  return total / static_cast<double>(fa.size());
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(int base) {
  c1 = register_module("c1", nn::Conv2d(3, base, 4, 2, 1));
  c2 = register_module("c2", nn::Conv2d(base, 2 * base, 4, 2, 1));
  c3 = register_module("c3", nn::Conv2d(2 * base, 4 * base, 3, 1, 1));
  c4 = register_module("c4", nn::Conv2d(4 * base, 1, 3, 1, 1));
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& images) {
  auto h = images.permute({0, 3, 1, 2});
  h = torch::leaky_relu(c1->forward(h), 0.2);
  h = torch::leaky_relu(c2->forward(h), 0.2);
  h = torch::leaky_relu(c3->forward(h), 0.2);
  return c4->forward(h);
}

AdversarialTerms hinge_losses(const torch::Tensor& real_logits, const torch::Tensor& fake_logits,
                              int64_t step, int64_t start_step) {
  AdversarialTerms out;
  if (step < start_step) {
    out.generator = torch::zeros({}, fake_logits.options());
    out.discriminator = torch::zeros({}, fake_logits.options());
    return out;
  }
  out.generator = -fake_logits.mean();
  out.discriminator = torch::relu(1.0 - real_logits).mean() + torch::relu(1.0 + fake_logits).mean();
  return out;
}

AdversarialTerms adversarial_losses(const torch::Tensor& images, const torch::Tensor& recon,
                                    PatchDiscriminator& discriminator, int64_t step,
                                    int64_t start_step) {
  if (step < start_step) {
    AdversarialTerms out;
    out.generator = torch::zeros({}, recon.options());
    out.discriminator = torch::zeros({}, recon.options());
    return out;
  }
  AdversarialTerms out;
  out.generator = -discriminator->forward(recon).mean();
  out.discriminator = hinge_losses(discriminator->forward(images.detach()),
                                   discriminator->forward(recon.detach()), step, start_step)
                          .discriminator;
  return out;
}

}  // namespace uniwetok
