#include "uniwetok/optim.hpp"

#include <cmath>

#include "uniwetok/errors.hpp"

namespace uniwetok {

Adam::Adam(std::vector<std::pair<std::string, torch::Tensor>> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  for (const auto& [name, p] : params_) {
    exp_avg_.push_back(torch::zeros_like(p));
    exp_avg_sq_.push_back(torch::zeros_like(p));
  }
}

void Adam::zero_grad() {
  for (auto& [name, p] : params_) {
    if (p.grad().defined()) {
      p.mutable_grad().detach_();
      p.mutable_grad().zero_();
    }
  }
}

void Adam::step() {
  torch::NoGradGuard no_grad;
  ++step_;
  const double bias1 = 1.0 - std::pow(options_.beta1, static_cast<double>(step_));
  const double bias2 = 1.0 - std::pow(options_.beta2, static_cast<double>(step_));
  const double step_size = options_.learning_rate / bias1;
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i].second;
    if (!p.grad().defined()) continue;
    auto grad = p.grad();
    if (options_.weight_decay != 0.0) grad = grad + options_.weight_decay * p;
    exp_avg_[i].mul_(options_.beta1).add_(grad, 1.0 - options_.beta1);
    exp_avg_sq_[i].mul_(options_.beta2).addcmul_(grad, grad, 1.0 - options_.beta2);
    auto denom = (exp_avg_sq_[i] / bias2).sqrt_().add_(options_.eps);
    p.addcdiv_(exp_avg_[i], denom, -step_size);
  }
}

std::map<std::string, torch::Tensor> Adam::state() const {
  std::map<std::string, torch::Tensor> out;
  for (size_t i = 0; i < params_.size(); ++i) {
    out[params_[i].first + ".exp_avg"] = exp_avg_[i];
    out[params_[i].first + ".exp_avg_sq"] = exp_avg_sq_[i];
  }
  out["step"] = torch::tensor({static_cast<double>(step_)}, torch::kFloat64);
  return out;
}

void Adam::load_state(const std::map<std::string, torch::Tensor>& state) {
  torch::NoGradGuard no_grad;
  for (size_t i = 0; i < params_.size(); ++i) {
    for (auto [suffix, target] : {std::pair{".exp_avg", &exp_avg_[i]},
                                  std::pair{".exp_avg_sq", &exp_avg_sq_[i]}}) {
      auto it = state.find(params_[i].first + suffix);
      if (it == state.end()) throw FormatError("optimizer state missing " + params_[i].first + suffix);
      if (it->second.sizes() != target->sizes()) {
        throw FormatError("optimizer state shape mismatch for " + params_[i].first + suffix);
      }
      target->copy_(it->second);
    }
  }
  auto it = state.find("step");
  if (it == state.end()) throw FormatError("optimizer state missing step count");
  step_ = static_cast<int64_t>(it->second.item<double>());
}

}  // namespace uniwetok
