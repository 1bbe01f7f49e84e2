#pragma once

#include <memory>
#include <string>
#include <vector>

#include "ctta/autograd.hpp"

namespace ctta::optim {

enum class OptimizerKind { adam, sgd };

OptimizerKind parse_optimizer_kind(const std::string& name);
std::string to_string(OptimizerKind kind);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double momentum = 0.9;  // sgd only
  double weight_decay = 0.0;
};

/// Gradient-descent optimizer over a fixed parameter set. State persists across steps.
template <typename T>
class Optimizer {
 public:
  Optimizer(std::vector<ag::Var<T>> params, OptimizerConfig config);

  void zero_grad();
  void step();

  const std::vector<ag::Var<T>>& params() const { return params_; }
  const OptimizerConfig& config() const { return config_; }
  std::size_t steps_taken() const { return steps_; }

 private:
  std::vector<ag::Var<T>> params_;
  OptimizerConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t steps_ = 0;
};

extern template class Optimizer<float>;
extern template class Optimizer<double>;

}  // namespace ctta::optim
