#pragma once

#include <cstdint>

#include "ctta/nn.hpp"

namespace ctta {

/// Whole feature map split into semantic and domain parts by an attention gate.
template <typename T>
struct FeatureBundle {
  ag::Var<T> whole;      // F
  ag::Var<T> attention;  // A(F), entries in (0, 1)
  ag::Var<T> semantic;   // F * A
  ag::Var<T> domain;     // F * (1 - A)
};

/// Coordinate attention gate.
///
/// Pools the feature map along each spatial axis, runs the concatenated strips through a shared 1x1
/// reduction (C -> C / r) with hard-swish, then expands each strip back to C channels through its own
/// 1x1 transform and a sigmoid. The gate is the broadcast product of the height and width gates.
template <typename T>
class CoordAttention {
 public:
  CoordAttention() = default;
  /// Throws ConfigError when channels < reduction.
  CoordAttention(std::size_t channels, std::size_t reduction, std::uint64_t seed);

  /// [B, C, H, W] -> A with the same shape.
  ag::Var<T> attend(const ag::Var<T>& features) const;

  /// Zeroes the expand transforms so both gates read sigmoid(0).
  void zero_expand();

  void collect(const std::string& prefix, std::vector<nn::NamedParam<T>>& out) const;
  std::vector<ag::Var<T>> parameters() const;

  std::size_t channels() const { return channels_; }
  std::size_t reduced() const { return reduced_; }

  ag::Var<T> reduce_weight;  // [C/r, C]
  ag::Var<T> reduce_bias;    // [C/r]
  ag::Var<T> expand_h_weight;
  ag::Var<T> expand_h_bias;
  ag::Var<T> expand_w_weight;
  ag::Var<T> expand_w_bias;

 private:
  std::size_t channels_ = 0;
  std::size_t reduced_ = 0;
};

/// F_S = F * A, F_D = F * (1 - A). Throws NumericError on non-finite input.
template <typename T>
FeatureBundle<T> disentangle(const ag::Var<T>& features, const ag::Var<T>& attention);

template <typename T>
FeatureBundle<T> disentangle(const ag::Var<T>& features, const CoordAttention<T>& gate) {
  return disentangle(features, gate.attend(features));
}

extern template class CoordAttention<float>;
extern template class CoordAttention<double>;

}  // namespace ctta
