#pragma once

#include <random>

#include "ctta/ops.hpp"

namespace ctta {

struct SclConfig {
  double momentum = 0.999;       // m
  double lambda_max = 1.0;
  double variance_floor = 1e-12;
  double class_mean_floor = 1e-8;
  bool hard_labels = false;           // argmax pseudo-labels instead of soft y
  bool per_batch_class_mean = false;  // align with E_B[y] of the current batch instead of the EMA
};

/// Running confidence statistics. Kept in double regardless of model precision.
struct ConfidenceState {
  double mu = 0.0;
  double sigma2 = 1.0;
  std::vector<double> class_mean;
  std::size_t step = 0;

  static ConfidenceState initial(std::size_t num_classes);
  std::size_t num_classes() const { return class_mean.size(); }
  bool operator==(const ConfidenceState&) const = default;
};

struct BatchStats {
  double mean = 0.0;      // mean_i max_c y_ic
  double variance = 0.0;  // population variance of the maxima
};

template <typename T>
BatchStats batch_stats(const Tensor<T>& probs);

/// Column mean E_B[y].
template <typename T>
std::vector<double> batch_class_mean(const Tensor<T>& probs);

/// mu <- m mu + (1-m) mu_b; sigma2 <- m sigma2 + (1-m) B/(B-1) var_b (skipped when B = 1);
/// class_mean <- m class_mean + (1-m) batch_mean.
ConfidenceState ema_update(const ConfidenceState& state, const BatchStats& stats, std::size_t batch_size,
                           const std::vector<double>& batch_mean, double momentum);

/// Row-wise normalize(y * (1/C) / c). Entries of c are floored at `floor`.
template <typename T>
Tensor<T> uniform_align(const Tensor<T>& probs, const std::vector<double>& class_mean, double floor = 1e-8);

/// lambda_max * exp(-(q - mu)^2 / (2 sigma2)) below mu, lambda_max at or above.
double gaussian_weight(double q, double mu, double sigma2, double lambda_max);

/// Per-row weights from the aligned maxima.
template <typename T>
std::vector<double> sample_weight(const Tensor<T>& probs, const ConfidenceState& state, const SclConfig& config,
                                  const std::vector<double>* align_mean = nullptr);

/// mean_i w_i * CE(target_i, prediction_i). `target` is treated as a constant.
template <typename T>
ag::Var<T> weighted_cross_entropy(const Tensor<T>& target, const ag::Var<T>& prediction,
                                  const std::vector<double>& weights);

template <typename T>
struct SclStep {
  ConfidenceState state;       // after this batch's update
  std::vector<double> weights;
  Tensor<T> pseudo_labels;
  BatchStats stats;
};

/// Updates the state with the batch first, then weighs each row against the updated statistics.
template <typename T>
SclStep<T> scl_prepare(const Tensor<T>& probs, const ConfidenceState& state, const SclConfig& config);

template <typename T>
ag::Var<T> loss_scl(const SclStep<T>& prepared, const ag::Var<T>& augmented_prediction) {
  return weighted_cross_entropy(prepared.pseudo_labels, augmented_prediction, prepared.weights);
}

struct AugmentPolicy {
  double flip_prob = 0.5;
  std::size_t crop_padding = 4;  // reflection padding for the random crop
  double brightness = 0.2;       // additive shift drawn from [-b, b]
  double contrast = 0.2;         // factor drawn from [1-c, 1+c] around the per-image mean

  static AugmentPolicy identity() { return {0.0, 0, 0.0, 0.0}; }
};

/// Per-sample random flip, crop and color jitter on [B,C,H,W] images in [0,1]; output clipped to [0,1].
Tensor<float> augment(const Tensor<float>& images, const AugmentPolicy& policy, std::mt19937_64& rng);

}  // namespace ctta
