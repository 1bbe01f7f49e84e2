#include "ctta/scl_loss.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>

namespace ctta {

namespace {

template <typename T>
void require_probs(const Tensor<T>& probs, const char* what) {
  if (probs.rank() != 2) throw ConfigError(std::string(what) + ": expected [B,C], got " + to_string(probs.shape()));
  if (probs.dim(0) == 0) throw DataError(std::string(what) + ": empty batch");
}

std::size_t reflect(long i, long n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
  return static_cast<std::size_t>(i);
}

}  // namespace

ConfidenceState ConfidenceState::initial(std::size_t num_classes) {
  if (num_classes == 0) throw ConfigError("confidence state needs at least one class");
  ConfidenceState s;
  s.mu = 1.0 / static_cast<double>(num_classes);
  s.sigma2 = 1.0;
  s.class_mean.assign(num_classes, 1.0 / static_cast<double>(num_classes));
  return s;
}

template <typename T>
BatchStats batch_stats(const Tensor<T>& probs) {
  require_probs(probs, "batch_stats");
  const std::size_t b = probs.dim(0), c = probs.dim(1);
  std::vector<double> maxima(b);
  for (std::size_t i = 0; i < b; ++i) {
    const T* row = probs.data() + i * c;
    maxima[i] = static_cast<double>(*std::max_element(row, row + c));
  }
  BatchStats s;
  for (double q : maxima) s.mean += q;
  s.mean /= static_cast<double>(b);
  for (double q : maxima) s.variance += (q - s.mean) * (q - s.mean);
  s.variance /= static_cast<double>(b);
  return s;
}

template <typename T>
std::vector<double> batch_class_mean(const Tensor<T>& probs) {
  require_probs(probs, "batch_class_mean");
  const std::size_t b = probs.dim(0), c = probs.dim(1);
  std::vector<double> mean(c, 0.0);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < c; ++j) mean[j] += static_cast<double>(probs.at(i, j));
  for (auto& v : mean) v /= static_cast<double>(b);
  return mean;
}

ConfidenceState ema_update(const ConfidenceState& state, const BatchStats& stats, std::size_t batch_size,
                           const std::vector<double>& batch_mean, double momentum) {
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("ema momentum must lie in [0, 1)");
  if (batch_size == 0) throw DataError("ema_update: empty batch");
  if (batch_mean.size() != state.class_mean.size()) throw ConfigError("ema_update: class count mismatch");
  const double m = momentum;
  ConfidenceState next = state;
  next.mu = m * state.mu + (1.0 - m) * stats.mean;
  if (batch_size >= 2) {
    const double bessel = static_cast<double>(batch_size) / static_cast<double>(batch_size - 1);
    next.sigma2 = m * state.sigma2 + (1.0 - m) * bessel * stats.variance;
  }
  for (std::size_t j = 0; j < batch_mean.size(); ++j)
    next.class_mean[j] = m * state.class_mean[j] + (1.0 - m) * batch_mean[j];
  ++next.step;
  return next;
}

template <typename T>
Tensor<T> uniform_align(const Tensor<T>& probs, const std::vector<double>& class_mean, double floor) {
  require_probs(probs, "uniform_align");
  const std::size_t b = probs.dim(0), c = probs.dim(1);
  if (class_mean.size() != c) throw ConfigError("uniform_align: class mean has wrong length");
  std::vector<double> ratio(c);
  for (std::size_t j = 0; j < c; ++j) {
    const double cm = std::max(class_mean[j], floor);
    if (!(cm > 0.0) || !std::isfinite(cm)) throw NumericError("uniform_align: class mean entry is not positive");
    ratio[j] = (1.0 / static_cast<double>(c)) / cm;
  }
  Tensor<T> out(probs.shape());
  std::vector<double> row(c);
  for (std::size_t i = 0; i < b; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      row[j] = static_cast<double>(probs.at(i, j)) * ratio[j];
      total += row[j];
    }
    if (!(total > 0.0)) throw NumericError("uniform_align: row " + std::to_string(i) + " has zero mass");
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) = static_cast<T>(row[j] / total);
  }
  return out;
}

double gaussian_weight(double q, double mu, double sigma2, double lambda_max) {
  if (q >= mu) return lambda_max;
  const double d = q - mu;
  return lambda_max * std::exp(-d * d / (2.0 * sigma2));
}

template <typename T>
std::vector<double> sample_weight(const Tensor<T>& probs, const ConfidenceState& state, const SclConfig& config,
                                  const std::vector<double>* align_mean) {
  const auto aligned =
      uniform_align(probs, align_mean ? *align_mean : state.class_mean, config.class_mean_floor);
  double sigma2 = state.sigma2;
  if (sigma2 <= config.variance_floor) {
    spdlog::warn("confidence variance {} at or below floor, clamped to {}", sigma2, config.variance_floor);
    sigma2 = config.variance_floor;
  }
  const std::size_t b = aligned.dim(0), c = aligned.dim(1);
  std::vector<double> w(b);
  for (std::size_t i = 0; i < b; ++i) {
    const T* row = aligned.data() + i * c;
    const double q = static_cast<double>(*std::max_element(row, row + c));
    w[i] = gaussian_weight(q, state.mu, sigma2, config.lambda_max);
  }
  return w;
}

template <typename T>
ag::Var<T> weighted_cross_entropy(const Tensor<T>& target, const ag::Var<T>& prediction,
                                  const std::vector<double>& weights) {
  if (target.shape() != prediction.shape() || target.rank() != 2) {
    throw ConfigError("weighted_cross_entropy: target " + to_string(target.shape()) + " vs prediction " +
                      to_string(prediction.shape()));
  }
  const std::size_t b = target.dim(0);
  if (weights.size() != b) throw ConfigError("weighted_cross_entropy: one weight per row required");
  Tensor<T> w({b});
  for (std::size_t i = 0; i < b; ++i) w[i] = static_cast<T>(weights[i]);
  auto terms = ag::mul(ag::Var<T>(target), ag::log_clamped(prediction, static_cast<T>(1e-12)));
  auto weighted = ag::scale_rows(terms, ag::Var<T>(std::move(w)));
  return ag::scale(ag::sum(weighted), T(-1) / static_cast<T>(b));
}

template <typename T>
SclStep<T> scl_prepare(const Tensor<T>& probs, const ConfidenceState& state, const SclConfig& config) {
  require_probs(probs, "scl");
  if (probs.dim(1) != state.num_classes()) throw ConfigError("scl: class count differs from confidence state");
  SclStep<T> out;
  out.stats = batch_stats(probs);
  const auto bmean = batch_class_mean(probs);
  out.state = ema_update(state, out.stats, probs.dim(0), bmean, config.momentum);
  out.weights = sample_weight(probs, out.state, config, config.per_batch_class_mean ? &bmean : nullptr);
  if (config.hard_labels) {
    const std::size_t b = probs.dim(0), c = probs.dim(1);
    out.pseudo_labels = Tensor<T>(probs.shape());
    for (std::size_t i = 0; i < b; ++i) {
      const T* row = probs.data() + i * c;
      out.pseudo_labels.at(i, static_cast<std::size_t>(std::max_element(row, row + c) - row)) = T(1);
    }
  } else {
    out.pseudo_labels = probs;
  }
  return out;
}

Tensor<float> augment(const Tensor<float>& images, const AugmentPolicy& policy, std::mt19937_64& rng) {
  if (images.rank() != 4) throw ConfigError("augment expects [B,C,H,W], got " + to_string(images.shape()));
  const std::size_t b = images.dim(0), ch = images.dim(1), h = images.dim(2), w = images.dim(3);
  const long pad = static_cast<long>(policy.crop_padding);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<long> shift(-pad, pad);
  Tensor<float> out(images.shape());
  const std::size_t plane = h * w;
  for (std::size_t n = 0; n < b; ++n) {
    const bool flip = unit(rng) < policy.flip_prob;
    const long dy = pad > 0 ? shift(rng) : 0;
    const long dx = pad > 0 ? shift(rng) : 0;
    const double bright = policy.brightness > 0 ? (2.0 * unit(rng) - 1.0) * policy.brightness : 0.0;
    const double contrast = policy.contrast > 0 ? 1.0 + (2.0 * unit(rng) - 1.0) * policy.contrast : 1.0;
    for (std::size_t c = 0; c < ch; ++c) {
      const float* src = images.data() + (n * ch + c) * plane;
      float* dst = out.data() + (n * ch + c) * plane;
      for (std::size_t y = 0; y < h; ++y) {
        const std::size_t sy = reflect(static_cast<long>(y) + dy, static_cast<long>(h));
        for (std::size_t x = 0; x < w; ++x) {
          const long xx = flip ? static_cast<long>(w - 1 - x) : static_cast<long>(x);
          dst[y * w + x] = src[sy * w + reflect(xx + dx, static_cast<long>(w))];
        }
      }
    }
    if (bright == 0.0 && contrast == 1.0) continue;
    float* img = out.data() + n * ch * plane;
    double mean = 0.0;
    for (std::size_t k = 0; k < ch * plane; ++k) mean += img[k];
    mean /= static_cast<double>(ch * plane);
    for (std::size_t k = 0; k < ch * plane; ++k) {
      const double v = (img[k] - mean) * contrast + mean + bright;
      img[k] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return out;
}

#define CTTA_INSTANTIATE_SCL(T)                                                                                   \
  template BatchStats batch_stats<T>(const Tensor<T>&);                                                           \
  template std::vector<double> batch_class_mean<T>(const Tensor<T>&);                                             \
  template Tensor<T> uniform_align<T>(const Tensor<T>&, const std::vector<double>&, double);                      \
  template std::vector<double> sample_weight<T>(const Tensor<T>&, const ConfidenceState&, const SclConfig&,       \
                                                const std::vector<double>*);                                      \
  template ag::Var<T> weighted_cross_entropy<T>(const Tensor<T>&, const ag::Var<T>&, const std::vector<double>&); \
  template SclStep<T> scl_prepare<T>(const Tensor<T>&, const ConfidenceState&, const SclConfig&);

CTTA_INSTANTIATE_SCL(float)
CTTA_INSTANTIATE_SCL(double)

}  // namespace ctta
