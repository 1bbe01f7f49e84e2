#include "ctta/backbone.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <sstream>

#include "ctta/optim.hpp"

namespace ctta {

ArchId parse_arch(const std::string& name) {
  if (name == "small_cnn") return ArchId::small_cnn;
  if (name == "wrn28") return ArchId::wrn28;
  throw ConfigError("unknown arch_id '" + name + "' (expected small_cnn or wrn28)");
}

std::string to_string(ArchId arch) { return arch == ArchId::small_cnn ? "small_cnn" : "wrn28"; }

NormMode parse_norm_mode(const std::string& name) {
  if (name == "source_stats") return NormMode::source_stats;
  if (name == "batch_stats") return NormMode::batch_stats;
  throw ConfigError("unknown normalization mode '" + name + "'");
}

namespace {

using ag::Var;

template <typename T>
class SmallCnn final : public Extractor<T> {
 public:
  SmallCnn(const std::vector<std::size_t>& widths, nn::Rng& rng) {
    if (widths.empty()) throw ConfigError("small_cnn needs at least one block width");
    std::size_t in = 3;
    for (auto w : widths) {
      if (w == 0) throw ConfigError("small_cnn block widths must be positive");
      convs_.emplace_back(in, w, 3, 1, 1, false, rng);
      norms_.emplace_back(w);
      in = w;
    }
  }

  Var<T> forward(const Var<T>& x) override {
    Var<T> h = x;
    const std::size_t pooled_blocks = convs_.size() > 2 ? convs_.size() - 2 : 0;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      h = ag::relu(norms_[i].forward(convs_[i].forward(h)));
      if (i < pooled_blocks && h.dim(2) >= 2 && h.dim(3) >= 2) h = ag::max_pool2x2(h);
    }
    return h;
  }

  void collect(std::vector<nn::NamedParam<T>>& out) const override {
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      const std::string p = "block" + std::to_string(i) + "/";
      convs_[i].collect(p + "conv/", out);
      norms_[i].collect(p + "bn/", out);
    }
  }

  void collect_buffers(std::vector<nn::NamedBuffer<T>>& out) override {
    for (std::size_t i = 0; i < norms_.size(); ++i) norms_[i].collect_buffers("block" + std::to_string(i) + "/bn/", out);
  }

  std::vector<nn::BatchNorm2d<T>*> norm_layers() override {
    std::vector<nn::BatchNorm2d<T>*> out;
    for (auto& n : norms_) out.push_back(&n);
    return out;
  }

  std::size_t out_channels() const override { return convs_.back().out_channels(); }

 private:
  std::vector<nn::Conv2d<T>> convs_;
  std::vector<nn::BatchNorm2d<T>> norms_;
};

// Pre-activation wide residual block.
template <typename T>
struct WideBlock {
  WideBlock(std::size_t in, std::size_t out, std::size_t stride, nn::Rng& rng)
      : bn1(in), conv1(in, out, 3, stride, 1, false, rng), bn2(out), conv2(out, out, 3, 1, 1, false, rng),
        equal_in_out(in == out && stride == 1) {
    if (!equal_in_out) shortcut = nn::Conv2d<T>(in, out, 1, stride, 0, false, rng);
  }

  Var<T> forward(const Var<T>& x) {
    Var<T> o = ag::relu(bn1.forward(x));
    Var<T> y = conv2.forward(ag::relu(bn2.forward(conv1.forward(o))));
    return ag::add(y, equal_in_out ? x : shortcut.forward(o));
  }

  void collect(const std::string& p, std::vector<nn::NamedParam<T>>& out) const {
    bn1.collect(p + "bn1/", out);
    conv1.collect(p + "conv1/", out);
    bn2.collect(p + "bn2/", out);
    conv2.collect(p + "conv2/", out);
    if (!equal_in_out) shortcut.collect(p + "convShortcut/", out);
  }

  nn::BatchNorm2d<T> bn1;
  nn::Conv2d<T> conv1;
  nn::BatchNorm2d<T> bn2;
  nn::Conv2d<T> conv2;
  nn::Conv2d<T> shortcut;
  bool equal_in_out;
};

template <typename T>
class WideResNet28 final : public Extractor<T> {
 public:
  WideResNet28(std::size_t widen, nn::Rng& rng) : conv1_(3, 16, 3, 1, 1, false, rng) {
    if (widen == 0) throw ConfigError("wrn28 widen_factor must be positive");
    constexpr std::size_t blocks_per_group = (28 - 4) / 6;
    const std::array<std::size_t, 4> channels{16, 16 * widen, 32 * widen, 64 * widen};
    for (std::size_t g = 0; g < 3; ++g)
      for (std::size_t b = 0; b < blocks_per_group; ++b) {
        const std::size_t in = b == 0 ? channels[g] : channels[g + 1];
        const std::size_t stride = (b == 0 && g > 0) ? 2 : 1;
        blocks_.emplace_back(in, channels[g + 1], stride, rng);
      }
    final_bn_ = nn::BatchNorm2d<T>(channels[3]);
    out_channels_ = channels[3];
  }

  Var<T> forward(const Var<T>& x) override {
    Var<T> h = conv1_.forward(x);
    for (auto& b : blocks_) h = b.forward(h);
    return ag::relu(final_bn_.forward(h));
  }

  void collect(std::vector<nn::NamedParam<T>>& out) const override {
    conv1_.collect("conv1/", out);
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(block_prefix(i), out);
    final_bn_.collect("bn1/", out);
  }

  void collect_buffers(std::vector<nn::NamedBuffer<T>>& out) override {
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      blocks_[i].bn1.collect_buffers(block_prefix(i) + "bn1/", out);
      blocks_[i].bn2.collect_buffers(block_prefix(i) + "bn2/", out);
    }
    final_bn_.collect_buffers("bn1/", out);
  }

  std::vector<nn::BatchNorm2d<T>*> norm_layers() override {
    std::vector<nn::BatchNorm2d<T>*> out;
    for (auto& b : blocks_) {
      out.push_back(&b.bn1);
      out.push_back(&b.bn2);
    }
    out.push_back(&final_bn_);
    return out;
  }

  std::size_t out_channels() const override { return out_channels_; }

 private:
  static std::string block_prefix(std::size_t i) {
    return "block" + std::to_string(i / 4 + 1) + "/layer" + std::to_string(i % 4) + "/";
  }

  nn::Conv2d<T> conv1_;
  std::vector<WideBlock<T>> blocks_;
  nn::BatchNorm2d<T> final_bn_;
  std::size_t out_channels_ = 0;
};

std::string join_widths(const std::vector<std::size_t>& widths) {
  std::string s;
  for (std::size_t i = 0; i < widths.size(); ++i) s += (i ? "," : "") + std::to_string(widths[i]);
  return s;
}

std::vector<double> parse_doubles(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stod(tok));
  return out;
}

std::string join_doubles(const std::array<double, 3>& v) {
  std::ostringstream os;
  os.precision(17);
  os << v[0] << "," << v[1] << "," << v[2];
  return os.str();
}

}  // namespace

template <typename T>
Backbone<T>::Backbone(ArchId arch, std::size_t num_classes, std::uint64_t seed, BackboneOptions options)
    : arch_(arch), num_classes_(num_classes), seed_(seed), options_(std::move(options)) {
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  for (double s : options_.input_std)
    if (!(s > 0.0)) throw ConfigError("input_std entries must be positive");
  nn::Rng rng(seed);
  if (arch == ArchId::small_cnn) {
    extractor_ = std::make_unique<SmallCnn<T>>(options_.widths, rng);
  } else {
    extractor_ = std::make_unique<WideResNet28<T>>(options_.widen_factor, rng);
  }
  classifier = nn::Linear<T>(extractor_->out_channels(), num_classes, rng);
}

template <typename T>
Var<T> Backbone<T>::features(const Var<T>& images) {
  if (images.shape().size() != 4 || images.dim(1) != 3) {
    throw ConfigError("backbone expects [B,3,H,W] images, got " + to_string(images.shape()));
  }
  const bool identity = options_.input_mean == std::array<double, 3>{0, 0, 0} &&
                        options_.input_std == std::array<double, 3>{1, 1, 1};
  if (identity) return extractor_->forward(images);
  std::vector<T> shift(3), inv(3);
  for (std::size_t c = 0; c < 3; ++c) {
    shift[c] = static_cast<T>(options_.input_mean[c]);
    inv[c] = static_cast<T>(1.0 / options_.input_std[c]);
  }
  return extractor_->forward(ag::channel_affine(images, shift, inv));
}

template <typename T>
Var<T> Backbone<T>::logits(const Var<T>& images) {
  return classifier.forward(ag::global_avg_pool(features(images)));
}

template <typename T>
void Backbone<T>::set_norm_mode(NormMode mode) {
  mode_ = mode;
  for (auto* bn : extractor_->norm_layers()) {
    bn->mode = mode;
    bn->update_running = false;
  }
}

template <typename T>
void Backbone<T>::set_training(bool on) {
  mode_ = on ? NormMode::batch_stats : NormMode::source_stats;
  for (auto* bn : extractor_->norm_layers()) {
    bn->mode = mode_;
    bn->update_running = on;
  }
}

template <typename T>
std::vector<nn::NamedParam<T>> Backbone<T>::extractor_parameters() const {
  std::vector<nn::NamedParam<T>> raw;
  extractor_->collect(raw);
  for (auto& p : raw) p.name = "backbone/" + p.name;
  return raw;
}

template <typename T>
std::vector<nn::NamedParam<T>> Backbone<T>::named_parameters() const {
  auto out = extractor_parameters();
  classifier.collect("classifier/", out);
  return out;
}

template <typename T>
std::vector<nn::NamedBuffer<T>> Backbone<T>::named_buffers() {
  std::vector<nn::NamedBuffer<T>> raw;
  extractor_->collect_buffers(raw);
  for (auto& b : raw) b.name = "backbone/" + b.name;
  return raw;
}

template <typename T>
std::vector<Var<T>> Backbone<T>::norm_affine_parameters() {
  std::vector<Var<T>> out;
  for (auto* bn : extractor_->norm_layers()) {
    out.push_back(bn->gamma);
    out.push_back(bn->beta);
  }
  return out;
}

template <typename T>
std::map<std::string, Tensor<T>> Backbone<T>::state() {
  std::map<std::string, Tensor<T>> out;
  for (const auto& p : named_parameters()) out.emplace(p.name, p.var.value());
  for (const auto& b : named_buffers()) out.emplace(b.name, *b.tensor);
  return out;
}

template <typename T>
void Backbone<T>::load_state(const std::map<std::string, Tensor<T>>& state) {
  auto assign = [&](const std::string& name, Tensor<T>& dst) {
    auto it = state.find(name);
    if (it == state.end()) throw DataError("state lacks '" + name + "'");
    if (it->second.shape() != dst.shape()) {
      throw DataError("state entry '" + name + "' has shape " + to_string(it->second.shape()) + ", expected " +
                      to_string(dst.shape()));
    }
    dst = it->second;
  };
  for (auto& p : named_parameters()) {
    auto& dst = p.var.mutable_value();
    assign(p.name, dst);
  }
  for (auto& b : named_buffers()) assign(b.name, *b.tensor);
}

template <typename T>
std::size_t Backbone<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : named_parameters()) n += p.var.value().size();
  return n;
}

template <typename T>
Backbone<T> build_backbone(const std::string& arch_id, std::size_t num_classes, std::uint64_t seed,
                           const BackboneOptions& options) {
  return Backbone<T>(parse_arch(arch_id), num_classes, seed, options);
}

template <typename T>
Checkpoint to_checkpoint(Backbone<T>& backbone, const std::map<std::string, std::string>& extra_meta) {
  Checkpoint ckpt;
  for (auto& [name, tensor] : backbone.state()) ckpt.params.emplace(name, tensor.template cast<float>());
  ckpt.meta = {{"arch_id", to_string(backbone.arch())},
               {"num_classes", std::to_string(backbone.num_classes())},
               {"seed", std::to_string(backbone.seed())},
               {"widths", join_widths(backbone.options().widths)},
               {"widen_factor", std::to_string(backbone.options().widen_factor)},
               {"input_mean", join_doubles(backbone.options().input_mean)},
               {"input_std", join_doubles(backbone.options().input_std)},
               {"dataset", ""},
               {"epochs", "0"},
               {"clean_accuracy", ""}};
  for (const auto& [k, v] : extra_meta) ckpt.meta[k] = v;
  return ckpt;
}

template <typename T>
Backbone<T> backbone_from_checkpoint(const Checkpoint& ckpt) {
  BackboneOptions options;
  if (auto it = ckpt.meta.find("widths"); it != ckpt.meta.end() && !it->second.empty()) {
    options.widths.clear();
    for (double w : parse_doubles(it->second)) options.widths.push_back(static_cast<std::size_t>(w));
  }
  if (auto it = ckpt.meta.find("widen_factor"); it != ckpt.meta.end() && !it->second.empty()) {
    options.widen_factor = std::stoul(it->second);
  }
  for (const char* key : {"input_mean", "input_std"}) {
    if (auto it = ckpt.meta.find(key); it != ckpt.meta.end() && !it->second.empty()) {
      const auto v = parse_doubles(it->second);
      if (v.size() != 3) throw DataError(std::string("checkpoint ") + key + " must have 3 entries");
      auto& dst = std::string(key) == "input_mean" ? options.input_mean : options.input_std;
      std::copy(v.begin(), v.end(), dst.begin());
    }
  }
  const auto num_classes = static_cast<std::size_t>(std::stoul(ckpt.meta_value("num_classes")));
  const auto seed = static_cast<std::uint64_t>(std::stoull(ckpt.meta.count("seed") ? ckpt.meta.at("seed") : "0"));
  Backbone<T> backbone(parse_arch(ckpt.meta_value("arch_id")), num_classes, seed, options);
  std::map<std::string, Tensor<T>> state;
  for (const auto& [name, tensor] : ckpt.params) {
    if constexpr (std::is_same_v<T, float>) {
      state.emplace(name, tensor);
    } else {
      state.emplace(name, tensor.template cast<T>());
    }
  }
  backbone.load_state(state);
  return backbone;
}

template <typename T>
std::vector<int> predict_labels(Backbone<T>& backbone, const Tensor<float>& images, std::size_t batch_size) {
  ag::NoGradGuard no_grad;
  std::vector<int> out;
  const std::size_t n = images.dim(0);
  out.reserve(n);
  for (std::size_t begin = 0; begin < n; begin += batch_size) {
    const std::size_t end = std::min(n, begin + batch_size);
    auto logits = backbone.logits(as_input<T>(slice_rows(images, begin, end)));
    const std::size_t c = logits.dim(1);
    for (std::size_t i = 0; i < end - begin; ++i) {
      const T* row = logits.value().data() + i * c;
      out.push_back(static_cast<int>(std::max_element(row, row + c) - row));
    }
  }
  return out;
}

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size() || labels.empty()) throw DataError("accuracy: length mismatch or empty");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

Checkpoint pretrain_source(Backbone<float>& backbone, const LabeledDataset& dataset, std::size_t epochs,
                           std::uint64_t seed, const PretrainOptions& options) {
  validate_labels(dataset, backbone.num_classes());
  if (options.batch_size < 2) throw ConfigError("pretraining batch_size must be at least 2");
  std::vector<ag::Var<float>> params;
  for (auto& p : backbone.named_parameters()) params.push_back(p.var);
  optim::OptimizerConfig oc;
  oc.lr = options.lr;
  oc.weight_decay = options.weight_decay;
  optim::Optimizer<float> opt(params, oc);

  const std::size_t n = dataset.size();
  const std::size_t classes = backbone.num_classes();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  const std::size_t plane = dataset.images.size() / std::max<std::size_t>(n, 1);

  backbone.set_training(true);
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t begin = 0; begin < n; begin += options.batch_size) {
      const std::size_t end = std::min(n, begin + options.batch_size);
      if (end - begin < 2) break;  // batch statistics need two samples
      Shape shape = dataset.images.shape();
      shape[0] = end - begin;
      Tensor<float> batch(shape);
      Tensor<float> onehot({end - begin, classes});
      for (std::size_t i = begin; i < end; ++i) {
        std::copy_n(dataset.images.data() + order[i] * plane, plane, batch.data() + (i - begin) * plane);
        onehot.at(i - begin, static_cast<std::size_t>(dataset.labels[order[i]])) = 1.0f;
      }
      opt.zero_grad();
      auto probs = ag::softmax_rows(backbone.logits(ag::Var<float>(std::move(batch))));
      auto nll = ag::mul(ag::Var<float>(std::move(onehot)), ag::log_clamped(probs, 1e-12f));
      auto loss = ag::scale(ag::sum(nll), -1.0f / static_cast<float>(end - begin));
      loss.backward();
      opt.step();
    }
  }
  backbone.set_norm_mode(NormMode::source_stats);

  const double train_acc = accuracy(predict_labels(backbone, dataset.images), dataset.labels);
  double clean_acc = train_acc;
  if (options.eval_set) {
    validate_labels(*options.eval_set, classes);
    clean_acc = accuracy(predict_labels(backbone, options.eval_set->images), options.eval_set->labels);
  }
  std::ostringstream ta, ca;
  ta.precision(6);
  ca.precision(6);
  ta << train_acc;
  ca << clean_acc;
  return to_checkpoint(backbone, {{"dataset", dataset.name},
                                  {"epochs", std::to_string(epochs)},
                                  {"seed", std::to_string(seed)},
                                  {"train_accuracy", ta.str()},
                                  {"clean_accuracy", ca.str()}});
}

template class Backbone<float>;
template class Backbone<double>;
template Backbone<float> build_backbone<float>(const std::string&, std::size_t, std::uint64_t, const BackboneOptions&);
template Backbone<double> build_backbone<double>(const std::string&, std::size_t, std::uint64_t,
                                                 const BackboneOptions&);
template Checkpoint to_checkpoint<float>(Backbone<float>&, const std::map<std::string, std::string>&);
template Checkpoint to_checkpoint<double>(Backbone<double>&, const std::map<std::string, std::string>&);
template Backbone<float> backbone_from_checkpoint<float>(const Checkpoint&);
template Backbone<double> backbone_from_checkpoint<double>(const Checkpoint&);
template std::vector<int> predict_labels<float>(Backbone<float>&, const Tensor<float>&, std::size_t);
template std::vector<int> predict_labels<double>(Backbone<double>&, const Tensor<float>&, std::size_t);

}  // namespace ctta
