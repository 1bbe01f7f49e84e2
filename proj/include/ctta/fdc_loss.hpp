#pragma once

#include <random>

#include "ctta/ops.hpp"

namespace ctta {

inline constexpr double kLogFloor = 1e-12;

struct MixupConfig {
  double alpha = 1.0;  // rho ~ Beta(alpha, alpha)
};

/// Soft-target cross-entropy averaged over the batch: -mean_b sum_c target * log(max(pred, 1e-12)).
/// Gradient reaches `target` only if it is attached to a graph.
template <typename T>
ag::Var<T> cross_entropy(const ag::Var<T>& target, const ag::Var<T>& prediction);

/// Consistency between the combined disentangled prediction (target, detached unless symmetric)
/// and the whole-feature prediction.
template <typename T>
ag::Var<T> loss_single(const ag::Var<T>& combined, const ag::Var<T>& whole, bool symmetric = false);

/// Draws one mixing ratio from Beta(alpha, alpha).
double sample_mixup_ratio(const MixupConfig& config, std::mt19937_64& rng);

template <typename T>
struct MixedBatch {
  Tensor<float> images;  // rho * x_i + (1 - rho) * x_j
  ag::Var<T> targets;    // rho * y_i + (1 - rho) * y_j
  double ratio = 1.0;
};

/// Convex combination of two image batches and their soft targets with one ratio for the batch.
/// The mixed targets are detached unless `keep_graph` is set.
template <typename T>
MixedBatch<T> mixup_pair(const Tensor<float>& images_i, const Tensor<float>& images_j, const ag::Var<T>& targets_i,
                         const ag::Var<T>& targets_j, double ratio, bool keep_graph = false);

/// In-batch pairing: sample i is mixed with sample (i + 1) mod B.
template <typename T>
MixedBatch<T> mixup_rolled(const Tensor<float>& images, const ag::Var<T>& targets, double ratio,
                           bool keep_graph = false);

/// Cross-entropy between the mixed targets and the whole-feature prediction on the mixed images.
template <typename T>
ag::Var<T> loss_mixup(const ag::Var<T>& mixed_targets, const ag::Var<T>& mixed_prediction) {
  return cross_entropy(mixed_targets, mixed_prediction);
}

}  // namespace ctta
