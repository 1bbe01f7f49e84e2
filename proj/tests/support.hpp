#pragma once

// Shared fixtures for the test binaries. The oracle_* functions are deliberately written as plain loops
// over std::vector so they share no code with the library.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "ctta/adaptation_engine.hpp"

namespace ctta::testing {

using Matrix = std::vector<std::vector<double>>;

inline Tensor<double> random_probs(std::size_t b, std::size_t c, std::mt19937_64& rng, double sharpness = 3.0) {
  std::normal_distribution<double> n(0.0, sharpness);
  Tensor<double> p({b, c});
  for (std::size_t i = 0; i < b; ++i) {
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (p.at(i, j) = std::exp(n(rng)));
    for (std::size_t j = 0; j < c; ++j) p.at(i, j) /= z;
  }
  return p;
}

inline Tensor<float> random_images(std::size_t b, std::size_t size, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Tensor<float> x({b, 3, size, size});
  for (auto& v : x.values()) v = u(rng);
  return x;
}

inline Matrix to_matrix(const Tensor<double>& t) {
  Matrix m(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) m[i][j] = t.at(i, j);
  return m;
}

/// Tiny backbone used by gradient checks and protocol tests (well under 1k parameters).
inline BackboneOptions tiny_options() {
  BackboneOptions o;
  o.widths = {2, 3, 4, 4};
  return o;
}

template <typename T>
Backbone<T> tiny_backbone(std::size_t classes = 3, std::uint64_t seed = 1) {
  return Backbone<T>(ArchId::small_cnn, classes, seed, tiny_options());
}

inline EngineConfig tiny_engine(Strategy s = Strategy::dcfs) {
  EngineConfig e;
  e.strategy = s;
  e.attention_reduction = 2;
  return e;
}

// ---- straight-line oracles ----

struct OracleState {
  double mu;
  double sigma2;
  std::vector<double> cmean;
};

inline std::pair<double, double> oracle_batch_stats(const Matrix& y) {
  std::vector<double> q;
  for (const auto& row : y) q.push_back(*std::max_element(row.begin(), row.end()));
  double mean = 0.0;
  for (double v : q) mean += v;
  mean /= static_cast<double>(q.size());
  double var = 0.0;
  for (double v : q) var += (v - mean) * (v - mean);
  var /= static_cast<double>(q.size());
  return {mean, var};
}

inline OracleState oracle_ema(const OracleState& s, const Matrix& y, double m) {
  auto [mb, vb] = oracle_batch_stats(y);
  const double b = static_cast<double>(y.size());
  OracleState out = s;
  out.mu = m * s.mu + (1 - m) * mb;
  if (y.size() > 1) out.sigma2 = m * s.sigma2 + (1 - m) * (b / (b - 1)) * vb;
  for (std::size_t j = 0; j < s.cmean.size(); ++j) {
    double col = 0.0;
    for (const auto& row : y) col += row[j];
    out.cmean[j] = m * s.cmean[j] + (1 - m) * col / b;
  }
  return out;
}

inline Matrix oracle_align(const Matrix& y, const std::vector<double>& cmean) {
  const double c = static_cast<double>(cmean.size());
  Matrix out = y;
  for (auto& row : out) {
    double z = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) z += (row[j] = row[j] * (1.0 / c) / std::max(cmean[j], 1e-8));
    for (auto& v : row) v /= z;
  }
  return out;
}

inline std::vector<double> oracle_weights(const Matrix& y, const OracleState& s, double lmax = 1.0) {
  std::vector<double> w;
  for (const auto& row : oracle_align(y, s.cmean)) {
    const double q = *std::max_element(row.begin(), row.end());
    w.push_back(q >= s.mu ? lmax : lmax * std::exp(-(q - s.mu) * (q - s.mu) / (2 * s.sigma2)));
  }
  return w;
}

inline double oracle_ce(const Matrix& target, const Matrix& pred) {
  double s = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i)
    for (std::size_t j = 0; j < target[i].size(); ++j) s -= target[i][j] * std::log(std::max(pred[i][j], 1e-12));
  return s / static_cast<double>(target.size());
}

inline double oracle_weighted_ce(const Matrix& target, const Matrix& pred, const std::vector<double>& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i)
    for (std::size_t j = 0; j < target[i].size(); ++j)
      s -= w[i] * target[i][j] * std::log(std::max(pred[i][j], 1e-12));
  return s / static_cast<double>(target.size());
}

/// SCL on y (pseudo-labels) and y' (prediction on the augmented view), updating the state first.
inline std::pair<double, OracleState> oracle_scl(const Matrix& y, const Matrix& y_aug, const OracleState& s,
                                                 double m) {
  const auto next = oracle_ema(s, y, m);
  return {oracle_weighted_ce(y, y_aug, oracle_weights(y, next)), next};
}

inline double oracle_cdm(const Matrix& ps, const Matrix& pd, const Matrix& ws, const Matrix& wd, double lambda) {
  double dist = 0.0;
  for (std::size_t i = 0; i < ps.size(); ++i)
    for (std::size_t j = 0; j < ps[i].size(); ++j) dist += std::abs(ps[i][j] - pd[i][j]);
  dist /= static_cast<double>(ps.size());
  double overlap = 0.0;
  for (std::size_t a = 0; a < ws.size(); ++a)
    for (std::size_t b = 0; b < wd.size(); ++b) {
      double dot = 0.0;
      for (std::size_t k = 0; k < ws[a].size(); ++k) dot += ws[a][k] * wd[b][k];
      overlap += std::abs(dot);
    }
  return dist + lambda * overlap;
}

// ---- finite differences ----

struct GradCheck {
  std::size_t checked = 0;
  std::size_t bad = 0;
  double worst = 0.0;  // largest |a - n| / max(|a|, |n|, floor)
};

/// Central differences of `loss` against the autograd gradient for every coordinate of `params`.
inline GradCheck check_gradients(std::vector<ag::Var<double>> params, const std::function<ag::Var<double>()>& loss,
                                 double rel_tol = 1e-3, double h = 1e-6, double abs_floor = 1e-7) {
  for (auto& p : params) p.zero_grad();
  loss().backward();
  GradCheck r;
  for (auto& p : params) {
    for (std::size_t k = 0; k < p.value().size(); ++k) {
      const double analytic = p.has_grad() ? p.grad()[k] : 0.0;
      const double orig = p.value()[k];
      auto eval = [&](double v) {
        p.mutable_value()[k] = v;
        ag::NoGradGuard guard;
        return loss().item();
      };
      const double numeric = (eval(orig + h) - eval(orig - h)) / (2 * h);
      p.mutable_value()[k] = orig;
      const double diff = std::abs(analytic - numeric);
      const double scale = std::max(std::abs(analytic), std::abs(numeric));
      ++r.checked;
      if (diff > rel_tol * scale + abs_floor) ++r.bad;
      if (scale > abs_floor) r.worst = std::max(r.worst, diff / scale);
    }
  }
  return r;
}

}  // namespace ctta::testing
