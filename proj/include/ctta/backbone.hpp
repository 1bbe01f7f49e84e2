#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ctta/checkpoint.hpp"
#include "ctta/dataset.hpp"
#include "ctta/nn.hpp"

namespace ctta {

using ag::NormMode;

enum class ArchId { small_cnn, wrn28 };

ArchId parse_arch(const std::string& name);
std::string to_string(ArchId arch);
NormMode parse_norm_mode(const std::string& name);

struct BackboneOptions {
  /// small_cnn: one conv3x3 -> batch-norm -> ReLU block per entry; 2x2 max-pool after all but the last two.
  std::vector<std::size_t> widths{32, 64, 128, 128};
  /// wrn28: channel multiplier k; groups have 16k, 32k, 64k channels.
  std::size_t widen_factor = 10;
  std::array<double, 3> input_mean{0.0, 0.0, 0.0};
  std::array<double, 3> input_std{1.0, 1.0, 1.0};
};

template <typename T>
class Extractor {
 public:
  virtual ~Extractor() = default;
  virtual ag::Var<T> forward(const ag::Var<T>& x) = 0;
  virtual void collect(std::vector<nn::NamedParam<T>>& out) const = 0;
  virtual void collect_buffers(std::vector<nn::NamedBuffer<T>>& out) = 0;
  virtual std::vector<nn::BatchNorm2d<T>*> norm_layers() = 0;
  virtual std::size_t out_channels() const = 0;
};

/// Feature extractor g plus the source classifier (pooled_dim -> num_classes).
template <typename T>
class Backbone {
 public:
  Backbone(ArchId arch, std::size_t num_classes, std::uint64_t seed, BackboneOptions options = {});

  /// [B, 3, H, W] -> [B, C_f, H_f, W_f]
  ag::Var<T> features(const ag::Var<T>& images);
  /// classifier(gap(features(images)))
  ag::Var<T> logits(const ag::Var<T>& images);

  void set_norm_mode(NormMode mode);
  NormMode norm_mode() const { return mode_; }
  /// Batch statistics with running-statistics updates (source training only).
  void set_training(bool on);

  /// Extractor parameters under "backbone/" and classifier under "classifier/".
  std::vector<nn::NamedParam<T>> named_parameters() const;
  std::vector<nn::NamedParam<T>> extractor_parameters() const;
  std::vector<nn::NamedBuffer<T>> named_buffers();
  /// Batch-norm scale and shift parameters.
  std::vector<ag::Var<T>> norm_affine_parameters();

  /// Parameters and buffers keyed by name.
  std::map<std::string, Tensor<T>> state();
  void load_state(const std::map<std::string, Tensor<T>>& state);

  ArchId arch() const { return arch_; }
  std::size_t num_classes() const { return num_classes_; }
  std::size_t pooled_dim() const { return extractor_->out_channels(); }
  std::uint64_t seed() const { return seed_; }
  const BackboneOptions& options() const { return options_; }
  std::size_t parameter_count() const;

  nn::Linear<T> classifier;

 private:
  ArchId arch_;
  std::size_t num_classes_;
  std::uint64_t seed_;
  BackboneOptions options_;
  NormMode mode_ = NormMode::source_stats;
  std::unique_ptr<Extractor<T>> extractor_;
};

template <typename T>
Backbone<T> build_backbone(const std::string& arch_id, std::size_t num_classes, std::uint64_t seed,
                           const BackboneOptions& options = {});

/// Serializes parameters, running statistics and architecture metadata.
template <typename T>
Checkpoint to_checkpoint(Backbone<T>& backbone, const std::map<std::string, std::string>& extra_meta = {});

/// Rebuilds the architecture recorded in the metadata and loads every tensor.
template <typename T>
Backbone<T> backbone_from_checkpoint(const Checkpoint& ckpt);

struct PretrainOptions {
  double lr = 1e-3;
  std::size_t batch_size = 64;
  double weight_decay = 5e-4;
  /// Held-out set for the recorded clean accuracy; the training set is used when absent.
  const LabeledDataset* eval_set = nullptr;
};

/// Supervised source training with Adam; batch norm tracks running statistics.
Checkpoint pretrain_source(Backbone<float>& backbone, const LabeledDataset& dataset, std::size_t epochs,
                           std::uint64_t seed, const PretrainOptions& options = {});

/// Argmax predictions in the backbone's current normalization mode.
template <typename T>
std::vector<int> predict_labels(Backbone<T>& backbone, const Tensor<float>& images, std::size_t batch_size = 256);

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels);

template <typename T>
ag::Var<T> as_input(const Tensor<float>& images) {
  if constexpr (std::is_same_v<T, float>) {
    return ag::Var<T>(images, false);
  } else {
    return ag::Var<T>(images.template cast<T>(), false);
  }
}

extern template class Backbone<float>;
extern template class Backbone<double>;

}  // namespace ctta
