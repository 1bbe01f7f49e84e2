#pragma once

#include "ctta/ops.hpp"

namespace ctta {

struct CdmConfig {
  double lambda = 0.1;  // weight of the cross-head weight-product penalty
};

template <typename T>
struct CdmTerms {
  ag::Var<T> distance;  // mean_b ||P_S - P_D||_1
  ag::Var<T> overlap;   // ||W_S W_D^T||_1
  ag::Var<T> total;     // distance + lambda * overlap
};

/// Prediction discrepancy between the two heads plus an L1 penalty on the [C,C] product of their
/// weight matrices (stored as [C, pooled_dim]). Subgradient of |x| at 0 is 0.
template <typename T>
CdmTerms<T> cdm_terms(const ag::Var<T>& p_semantic, const ag::Var<T>& p_domain, const ag::Var<T>& w_semantic,
                      const ag::Var<T>& w_domain, const CdmConfig& config = {});

template <typename T>
ag::Var<T> loss_cdm(const ag::Var<T>& p_semantic, const ag::Var<T>& p_domain, const ag::Var<T>& w_semantic,
                    const ag::Var<T>& w_domain, const CdmConfig& config = {}) {
  return cdm_terms(p_semantic, p_domain, w_semantic, w_domain, config).total;
}

}  // namespace ctta
