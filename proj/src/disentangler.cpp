#include "ctta/disentangler.hpp"

#include <cmath>

namespace ctta {

template <typename T>
CoordAttention<T>::CoordAttention(std::size_t channels, std::size_t reduction, std::uint64_t seed)
    : channels_(channels) {
  if (reduction == 0) throw ConfigError("attention reduction ratio must be positive");
  if (channels < reduction) {
    throw ConfigError("attention: feature channels " + std::to_string(channels) + " smaller than reduction ratio " +
                      std::to_string(reduction));
  }
  reduced_ = channels / reduction;
  nn::Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(channels));
  reduce_weight = ag::Var<T>(nn::uniform_tensor<T>({reduced_, channels}, bound, rng), true);
  reduce_bias = ag::Var<T>(nn::uniform_tensor<T>({reduced_}, bound, rng), true);
  // Each directional gate starts at sqrt(1/2) so A = 1/2 and F_S = F_D = F / 2.
  const T gate_logit = static_cast<T>(std::log(std::sqrt(0.5) / (1.0 - std::sqrt(0.5))));
  expand_h_weight = ag::Var<T>(Tensor<T>({channels, reduced_}), true);
  expand_h_bias = ag::Var<T>(Tensor<T>({channels}, gate_logit), true);
  expand_w_weight = ag::Var<T>(Tensor<T>({channels, reduced_}), true);
  expand_w_bias = ag::Var<T>(Tensor<T>({channels}, gate_logit), true);
}

template <typename T>
ag::Var<T> CoordAttention<T>::attend(const ag::Var<T>& features) const {
  if (features.shape().size() != 4 || features.dim(1) != channels_) {
    throw ConfigError("attention expects [B," + std::to_string(channels_) + ",H,W], got " +
                      to_string(features.shape()));
  }
  const std::size_t h = features.dim(2), w = features.dim(3);
  auto strips = ag::concat_last(ag::mean_over_width(features), ag::mean_over_height(features));
  auto mixed = ag::hard_swish(ag::channel_mix(strips, reduce_weight, reduce_bias));
  auto gate_h = ag::sigmoid(ag::channel_mix(ag::slice_last(mixed, 0, h), expand_h_weight, expand_h_bias));
  auto gate_w = ag::sigmoid(ag::channel_mix(ag::slice_last(mixed, h, w), expand_w_weight, expand_w_bias));
  return ag::outer_gate(gate_h, gate_w);
}

template <typename T>
void CoordAttention<T>::zero_expand() {
  for (auto* v : {&expand_h_weight, &expand_h_bias, &expand_w_weight, &expand_w_bias}) v->mutable_value().fill(T(0));
}

template <typename T>
void CoordAttention<T>::collect(const std::string& prefix, std::vector<nn::NamedParam<T>>& out) const {
  out.push_back({prefix + "reduce/weight", reduce_weight});
  out.push_back({prefix + "reduce/bias", reduce_bias});
  out.push_back({prefix + "expand_h/weight", expand_h_weight});
  out.push_back({prefix + "expand_h/bias", expand_h_bias});
  out.push_back({prefix + "expand_w/weight", expand_w_weight});
  out.push_back({prefix + "expand_w/bias", expand_w_bias});
}

template <typename T>
std::vector<ag::Var<T>> CoordAttention<T>::parameters() const {
  return {reduce_weight, reduce_bias, expand_h_weight, expand_h_bias, expand_w_weight, expand_w_bias};
}

template <typename T>
FeatureBundle<T> disentangle(const ag::Var<T>& features, const ag::Var<T>& attention) {
  for (auto v : features.value().values())
    if (!std::isfinite(v)) throw NumericError("disentangle: feature map contains non-finite values");
  FeatureBundle<T> b;
  b.whole = features;
  b.attention = attention;
  b.semantic = ag::mul(features, attention);
  b.domain = ag::mul(features, ag::one_minus(attention));
  return b;
}

template class CoordAttention<float>;
template class CoordAttention<double>;
template FeatureBundle<float> disentangle<float>(const ag::Var<float>&, const ag::Var<float>&);
template FeatureBundle<double> disentangle<double>(const ag::Var<double>&, const ag::Var<double>&);

}  // namespace ctta
