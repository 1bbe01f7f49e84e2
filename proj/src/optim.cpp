#include "ctta/optim.hpp"

#include <cmath>

namespace ctta::optim {

OptimizerKind parse_optimizer_kind(const std::string& name) {
  if (name == "adam") return OptimizerKind::adam;
  if (name == "sgd") return OptimizerKind::sgd;
  throw ConfigError("unknown optimizer '" + name + "' (expected adam or sgd)");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "sgd"; }

template <typename T>
Optimizer<T>::Optimizer(std::vector<ag::Var<T>> params, OptimizerConfig config)
    : params_(std::move(params)), config_(config) {
  if (config_.lr < 0.0) throw ConfigError("learning rate must be non-negative");
  for (const auto& p : params_) {
    if (!p.requires_grad()) throw ConfigError("optimizer given a parameter that does not require grad");
    m_.emplace_back(p.value().size(), 0.0);
    v_.emplace_back(p.value().size(), 0.0);
  }
}

template <typename T>
void Optimizer<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename T>
void Optimizer<T>::step() {
  ++steps_;
  const double lr = config_.lr;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    if (!p.has_grad()) continue;
    auto& value = p.mutable_value();
    const auto& grad = p.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < value.size(); ++i) {
      double g = static_cast<double>(grad[i]) + config_.weight_decay * static_cast<double>(value[i]);
      if (config_.kind == OptimizerKind::adam) {
        m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
        v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
        const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + config_.eps);
        value[i] = static_cast<T>(static_cast<double>(value[i]) - lr * update);
      } else {
        m[i] = config_.momentum * m[i] + g;
        value[i] = static_cast<T>(static_cast<double>(value[i]) - lr * m[i]);
      }
    }
  }
}

template class Optimizer<float>;
template class Optimizer<double>;

}  // namespace ctta::optim
