#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "ctta/ops.hpp"

namespace ctta::nn {

using ag::NormMode;
using ag::Var;

template <typename T>
struct NamedParam {
  std::string name;
  Var<T> var;
};

template <typename T>
struct NamedBuffer {
  std::string name;
  Tensor<T>* tensor;
};

using Rng = std::mt19937_64;

/// Values are drawn in double so float and double models built from one seed agree.
template <typename T>
Tensor<T> normal_tensor(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
Tensor<T> uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

/// Square-kernel convolution, He-normal initialization.
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t pad, bool with_bias,
         Rng& rng)
      : stride_(stride), pad_(pad) {
    const double fan_in = static_cast<double>(in * kernel * kernel);
    weight = Var<T>(normal_tensor<T>({out, in, kernel, kernel}, std::sqrt(2.0 / fan_in), rng), true);
    if (with_bias) bias = Var<T>(Tensor<T>({out}), true);
  }

  Var<T> forward(const Var<T>& x) const { return ag::conv2d(x, weight, bias, stride_, pad_); }

  void collect(const std::string& prefix, std::vector<NamedParam<T>>& out) const {
    out.push_back({prefix + "weight", weight});
    if (bias.defined()) out.push_back({prefix + "bias", bias});
  }

  std::size_t out_channels() const { return weight.dim(0); }

  Var<T> weight;
  Var<T> bias;

 private:
  std::size_t stride_ = 1;
  std::size_t pad_ = 0;
};

template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(std::size_t channels)
      : gamma(Tensor<T>({channels}, T(1)), true),
        beta(Tensor<T>({channels}), true),
        running_mean({channels}, T(0)),
        running_var({channels}, T(1)) {}

  Var<T> forward(const Var<T>& x) {
    ag::BatchNormOptions opts;
    opts.mode = mode;
    opts.update_running = update_running;
    return ag::batch_norm2d(x, gamma, beta, running_mean, running_var, opts);
  }

  void collect(const std::string& prefix, std::vector<NamedParam<T>>& out) const {
    out.push_back({prefix + "weight", gamma});
    out.push_back({prefix + "bias", beta});
  }
  void collect_buffers(const std::string& prefix, std::vector<NamedBuffer<T>>& out) {
    out.push_back({prefix + "running_mean", &running_mean});
    out.push_back({prefix + "running_var", &running_var});
  }

  Var<T> gamma;
  Var<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  NormMode mode = NormMode::source_stats;
  bool update_running = false;
};

/// Affine map with weight [out, in]; PyTorch-style uniform initialization.
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight = Var<T>(uniform_tensor<T>({out, in}, bound, rng), true);
    bias = Var<T>(uniform_tensor<T>({out}, bound, rng), true);
  }

  Var<T> forward(const Var<T>& x) const { return ag::linear(x, weight, bias); }

  void collect(const std::string& prefix, std::vector<NamedParam<T>>& out) const {
    out.push_back({prefix + "weight", weight});
    out.push_back({prefix + "bias", bias});
  }

  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }

  Var<T> weight;
  Var<T> bias;
};

/// Deep copy of a parameter's value into a fresh leaf.
template <typename T>
Var<T> clone_param(const Var<T>& v, bool requires_grad) {
  return Var<T>(v.value(), requires_grad);
}

}  // namespace ctta::nn
