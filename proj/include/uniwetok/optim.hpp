#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace uniwetok {

struct AdamOptions {
  double learning_rate = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Adam over named parameters, with its moment estimates exposed by name so
// checkpoints can carry them.
class Adam {
 public:
  Adam(std::vector<std::pair<std::string, torch::Tensor>> params, AdamOptions options);

  void zero_grad();
  void step();
  void set_learning_rate(double lr) { options_.learning_rate = lr; }
  double learning_rate() const { return options_.learning_rate; }
  int64_t steps_taken() const { return step_; }

  // "<name>.exp_avg" / "<name>.exp_avg_sq" tensors plus the step count.
  std::map<std::string, torch::Tensor> state() const;
  void load_state(const std::map<std::string, torch::Tensor>& state);

 private:
  std::vector<std::pair<std::string, torch::Tensor>> params_;
  std::vector<torch::Tensor> exp_avg_, exp_avg_sq_;
  AdamOptions options_;
  int64_t step_ = 0;
};

}  // namespace uniwetok
