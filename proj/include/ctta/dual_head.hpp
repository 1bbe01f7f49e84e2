#pragma once

#include "ctta/disentangler.hpp"

namespace ctta {

/// Row-stochastic outputs of the two heads for one batch.
template <typename T>
struct PredictionBundle {
  ag::Var<T> semantic;  // P_S = softmax(h_S(pool(F_S)))
  ag::Var<T> domain;    // P_D = softmax(h_D(pool(F_D)))
  ag::Var<T> combined;  // P = (P_S + P_D) / 2
  ag::Var<T> whole;     // y = softmax(h_S(pool(F)))
};

/// Averages two probability batches.
template <typename T>
ag::Var<T> combine(const ag::Var<T>& semantic, const ag::Var<T>& domain);

/// Semantic head h_S (trainable) and domain head h_D (frozen), both seeded from the source classifier.
template <typename T>
class DualHead {
 public:
  DualHead() = default;
  explicit DualHead(const nn::Linear<T>& source_classifier);

  std::pair<ag::Var<T>, ag::Var<T>> predict_parts(const FeatureBundle<T>& bundle) const;
  ag::Var<T> predict_whole(const ag::Var<T>& features) const;
  PredictionBundle<T> predict(const FeatureBundle<T>& bundle) const;

  void collect(std::vector<nn::NamedParam<T>>& out) const;

  nn::Linear<T> semantic;
  nn::Linear<T> domain;
};

extern template class DualHead<float>;
extern template class DualHead<double>;

}  // namespace ctta
