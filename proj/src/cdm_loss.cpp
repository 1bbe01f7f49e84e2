#include "ctta/cdm_loss.hpp"

namespace ctta {

template <typename T>
CdmTerms<T> cdm_terms(const ag::Var<T>& p_semantic, const ag::Var<T>& p_domain, const ag::Var<T>& w_semantic,
                      const ag::Var<T>& w_domain, const CdmConfig& config) {
  if (!(config.lambda >= 0.0)) throw ConfigError("cdm lambda must be non-negative");
  if (p_semantic.shape() != p_domain.shape() || p_semantic.shape().size() != 2) {
    throw ConfigError("cdm: prediction shapes " + to_string(p_semantic.shape()) + " and " +
                      to_string(p_domain.shape()) + " must be matching [B,C]");
  }
  if (w_semantic.shape() != w_domain.shape() || w_semantic.shape().size() != 2) {
    throw ConfigError("cdm: weight shapes " + to_string(w_semantic.shape()) + " and " + to_string(w_domain.shape()) +
                      " must be matching [C,D]");
  }
  if (w_semantic.dim(0) != p_semantic.dim(1)) throw ConfigError("cdm: head rows differ from class count");
  CdmTerms<T> t;
  const auto batch = static_cast<T>(p_semantic.dim(0));
  t.distance = ag::scale(ag::sum(ag::abs(ag::sub(p_semantic, p_domain))), T(1) / batch);
  t.overlap = ag::sum(ag::abs(ag::matmul_nt(w_semantic, w_domain)));
  t.total = ag::add(t.distance, ag::scale(t.overlap, static_cast<T>(config.lambda)));
  return t;
}

template CdmTerms<float> cdm_terms<float>(const ag::Var<float>&, const ag::Var<float>&, const ag::Var<float>&,
                                          const ag::Var<float>&, const CdmConfig&);
template CdmTerms<double> cdm_terms<double>(const ag::Var<double>&, const ag::Var<double>&, const ag::Var<double>&,
                                            const ag::Var<double>&, const CdmConfig&);

}  // namespace ctta
