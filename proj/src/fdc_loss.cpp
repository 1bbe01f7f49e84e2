#include "ctta/fdc_loss.hpp"

namespace ctta {

template <typename T>
ag::Var<T> cross_entropy(const ag::Var<T>& target, const ag::Var<T>& prediction) {
  if (target.shape() != prediction.shape() || target.shape().size() != 2) {
    throw ConfigError("cross_entropy: target " + to_string(target.shape()) + " and prediction " +
                      to_string(prediction.shape()) + " must be matching [B,C]");
  }
  const auto batch = static_cast<T>(target.dim(0));
  auto terms = ag::mul(target, ag::log_clamped(prediction, static_cast<T>(kLogFloor)));
  return ag::scale(ag::sum(terms), T(-1) / batch);
}

template <typename T>
ag::Var<T> loss_single(const ag::Var<T>& combined, const ag::Var<T>& whole, bool symmetric) {
  return cross_entropy(symmetric ? combined : ag::detach(combined), whole);
}

double sample_mixup_ratio(const MixupConfig& config, std::mt19937_64& rng) {
  if (!(config.alpha > 0.0)) throw ConfigError("mixup alpha must be positive");
  std::gamma_distribution<double> gamma(config.alpha, 1.0);
  const double a = gamma(rng);
  const double b = gamma(rng);
  return a / (a + b);
}

template <typename T>
MixedBatch<T> mixup_pair(const Tensor<float>& images_i, const Tensor<float>& images_j, const ag::Var<T>& targets_i,
                         const ag::Var<T>& targets_j, double ratio, bool keep_graph) {
  if (images_i.shape() != images_j.shape()) throw ConfigError("mixup_pair: image batches differ in shape");
  if (ratio < 0.0 || ratio > 1.0) throw ConfigError("mixup ratio must lie in [0, 1]");
  MixedBatch<T> out;
  out.ratio = ratio;
  out.images = Tensor<float>(images_i.shape());
  const auto r = static_cast<float>(ratio);
  for (std::size_t k = 0; k < images_i.size(); ++k) out.images[k] = r * images_i[k] + (1.0f - r) * images_j[k];
  const auto rt = static_cast<T>(ratio);
  auto mixed = ag::add(ag::scale(targets_i, rt), ag::scale(targets_j, T(1) - rt));
  out.targets = keep_graph ? mixed : ag::detach(mixed);
  return out;
}

template <typename T>
MixedBatch<T> mixup_rolled(const Tensor<float>& images, const ag::Var<T>& targets, double ratio, bool keep_graph) {
  return mixup_pair(images, roll_rows(images, 1), targets, ag::roll_rows(targets, 1), ratio, keep_graph);
}

#define CTTA_INSTANTIATE_FDC(T)                                                                                  \
  template ag::Var<T> cross_entropy<T>(const ag::Var<T>&, const ag::Var<T>&);                                    \
  template ag::Var<T> loss_single<T>(const ag::Var<T>&, const ag::Var<T>&, bool);                                \
  template MixedBatch<T> mixup_pair<T>(const Tensor<float>&, const Tensor<float>&, const ag::Var<T>&,            \
                                       const ag::Var<T>&, double, bool);                                         \
  template MixedBatch<T> mixup_rolled<T>(const Tensor<float>&, const ag::Var<T>&, double, bool);

CTTA_INSTANTIATE_FDC(float)
CTTA_INSTANTIATE_FDC(double)

}  // namespace ctta
