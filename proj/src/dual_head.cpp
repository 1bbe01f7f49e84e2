#include "ctta/dual_head.hpp"

namespace ctta {

template <typename T>
ag::Var<T> combine(const ag::Var<T>& semantic, const ag::Var<T>& domain) {
  return ag::scale(ag::add(semantic, domain), T(0.5));
}

template <typename T>
DualHead<T>::DualHead(const nn::Linear<T>& source_classifier) {
  semantic.weight = nn::clone_param(source_classifier.weight, true);
  semantic.bias = nn::clone_param(source_classifier.bias, true);
  domain.weight = nn::clone_param(source_classifier.weight, false);
  domain.bias = nn::clone_param(source_classifier.bias, false);
}

template <typename T>
std::pair<ag::Var<T>, ag::Var<T>> DualHead<T>::predict_parts(const FeatureBundle<T>& bundle) const {
  auto p_s = ag::softmax_rows(semantic.forward(ag::global_avg_pool(bundle.semantic)));
  auto p_d = ag::softmax_rows(domain.forward(ag::global_avg_pool(bundle.domain)));
  return {p_s, p_d};
}

template <typename T>
ag::Var<T> DualHead<T>::predict_whole(const ag::Var<T>& features) const {
  return ag::softmax_rows(semantic.forward(ag::global_avg_pool(features)));
}

template <typename T>
PredictionBundle<T> DualHead<T>::predict(const FeatureBundle<T>& bundle) const {
  PredictionBundle<T> p;
  std::tie(p.semantic, p.domain) = predict_parts(bundle);
  p.combined = combine(p.semantic, p.domain);
  p.whole = predict_whole(bundle.whole);
  return p;
}

template <typename T>
void DualHead<T>::collect(std::vector<nn::NamedParam<T>>& out) const {
  semantic.collect("head_S/", out);
  domain.collect("head_D/", out);
}

template class DualHead<float>;
template class DualHead<double>;
template ag::Var<float> combine<float>(const ag::Var<float>&, const ag::Var<float>&);
template ag::Var<double> combine<double>(const ag::Var<double>&, const ag::Var<double>&);

}  // namespace ctta
