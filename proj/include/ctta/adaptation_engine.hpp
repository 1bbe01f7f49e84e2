#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ctta/backbone.hpp"
#include "ctta/cdm_loss.hpp"
#include "ctta/corruption_stream.hpp"
#include "ctta/dual_head.hpp"
#include "ctta/fdc_loss.hpp"
#include "ctta/optim.hpp"
#include "ctta/scl_loss.hpp"

namespace ctta {

enum class Strategy { source, bn_adapt, tent, dcfs };
Strategy parse_strategy(const std::string& name);
std::string to_string(Strategy s);

/// Which DCFS loss terms participate (ablation switches).
struct LossToggles {
  bool single = true;
  bool mixup = true;
  bool cdm = true;
  bool scl = true;
};

struct EngineConfig {
  Strategy strategy = Strategy::dcfs;
  double lambda_cdm = 1.0;
  double lambda_scl = 1.0;
  optim::OptimizerConfig optimizer{};
  std::size_t attention_reduction = 8;
  bool symmetric_consistency = false;
  MixupConfig mixup{};
  CdmConfig cdm{};
  SclConfig scl{};
  AugmentPolicy augment{};
  LossToggles losses{};
  std::uint64_t seed = 0;

  void validate() const;
};

/// Backbone plus the attention gate and the two heads.
template <typename T>
struct DcfsModel {
  DcfsModel(Backbone<T> backbone, std::size_t reduction, std::uint64_t seed);

  Backbone<T> backbone;
  CoordAttention<T> attention;
  DualHead<T> heads;

  /// "backbone/...", "attn/...", "head_S/...", "head_D/...".
  std::vector<nn::NamedParam<T>> named_parameters() const;
  /// Extractor, attention and semantic head. The domain head is excluded.
  std::vector<ag::Var<T>> trainable_parameters() const;

  FeatureBundle<T> disentangled(const Tensor<float>& images);
  PredictionBundle<T> predict(const Tensor<float>& images);
};

/// Random quantities consumed by one DCFS step.
struct DcfsDraws {
  double rho = 1.0;
  Tensor<float> augmented;
};

DcfsDraws draw_dcfs(const Tensor<float>& images, const EngineConfig& config, std::mt19937_64& rng);

template <typename T>
struct DcfsLoss {
  ag::Var<T> total;
  ag::Var<T> fdc;
  ag::Var<T> single;
  ag::Var<T> mixup;
  ag::Var<T> cdm;
  ag::Var<T> scl;
  PredictionBundle<T> predictions;
  SclStep<T> scl_step;
  bool mixup_used = false;
};

/// Builds L = L_FDC + lambda_cdm L_CDM + lambda_scl L_SCL for one batch. Switched-off terms are constant 0.
template <typename T>
DcfsLoss<T> dcfs_loss(DcfsModel<T>& model, const Tensor<float>& images, const DcfsDraws& draws,
                      const ConfidenceState& confidence, const EngineConfig& config);

/// -mean_b sum_c p log p with p = softmax(logits).
template <typename T>
ag::Var<T> entropy_loss(const ag::Var<T>& logits);

struct StepLosses {
  double total = 0.0;
  double fdc = 0.0;
  double single = 0.0;
  double mixup = 0.0;
  double cdm = 0.0;
  double scl = 0.0;
  double mean_weight = 0.0;
  double rho = 1.0;
};

struct StepResult {
  std::vector<int> predictions;        // argmax(P) for dcfs, argmax(logits) otherwise
  std::vector<int> whole_predictions;  // argmax(y) for dcfs, same as predictions otherwise
  StepLosses losses;
};

/// One online learner. Predictions for a batch come from the forward that precedes its update.
template <typename T>
class Adapter {
 public:
  Adapter(Backbone<T> backbone, EngineConfig config);

  StepResult step(const Tensor<float>& images);

  const EngineConfig& config() const { return config_; }
  DcfsModel<T>& model() { return *model_; }
  const ConfidenceState& confidence() const { return confidence_; }
  const optim::Optimizer<T>* optimizer() const { return optimizer_.get(); }
  std::size_t steps() const { return steps_; }
  std::size_t num_classes() const { return model_->backbone.num_classes(); }

 private:
  StepResult step_dcfs(const Tensor<float>& images);
  StepResult step_tent(const Tensor<float>& images);
  StepResult step_inference(const Tensor<float>& images);

  EngineConfig config_;
  std::unique_ptr<DcfsModel<T>> model_;
  std::unique_ptr<optim::Optimizer<T>> optimizer_;
  ConfidenceState confidence_;
  std::mt19937_64 rng_;
  std::size_t steps_ = 0;
};

extern template class Adapter<float>;
extern template class Adapter<double>;

/// Per-batch log line.
struct RunRecord {
  std::size_t step = 0;
  std::string domain;
  int severity = 0;
  double batch_error = 0.0;
  double loss_total = 0.0;
  double loss_fdc = 0.0;
  double loss_cdm = 0.0;
  double loss_scl = 0.0;
  double mu_t = 0.0;
  double sigma2_t = 0.0;
  double mean_weight = 0.0;

  std::string to_json() const;
  static RunRecord from_json(const std::string& line);
  bool operator==(const RunRecord&) const = default;
};

void write_run_records(const std::filesystem::path& path, const std::vector<RunRecord>& records);
std::vector<RunRecord> read_run_records(const std::filesystem::path& path);

struct OnlineResult {
  std::string method;
  std::vector<std::string> domains;  // corruption names in stream order
  std::vector<int> severities;
  std::vector<std::vector<int>> predictions;  // per domain, in sample order
  std::vector<double> domain_error;           // percent
  double mean_error = 0.0;                    // unweighted mean over domains
  std::vector<RunRecord> records;
};

/// Runs the continual protocol over every domain without resetting any state between domains.
/// Throws DataError when stream labels or image channels do not fit the model.
template <typename T>
OnlineResult run_stream(DomainStream& stream, Adapter<T>& adapter, const std::string& method = "");

}  // namespace ctta
