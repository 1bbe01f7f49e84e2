#include "ctta/adaptation_engine.hpp"

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <cmath>
#include <fstream>
#include <sstream>

namespace ctta {

namespace {

template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& probs) {
  const std::size_t b = probs.dim(0), c = probs.dim(1);
  std::vector<int> out(b);
  for (std::size_t i = 0; i < b; ++i) {
    const T* row = probs.data() + i * c;
    out[i] = static_cast<int>(std::max_element(row, row + c) - row);
  }
  return out;
}

template <typename T>
ag::Var<T> zero_scalar() {
  return ag::Var<T>(Tensor<T>(Shape{1}));
}

template <typename T>
double scalar(const ag::Var<T>& v) {
  return static_cast<double>(v.item());
}

}  // namespace

Strategy parse_strategy(const std::string& name) {
  if (name == "source") return Strategy::source;
  if (name == "bn_adapt") return Strategy::bn_adapt;
  if (name == "tent") return Strategy::tent;
  if (name == "dcfs") return Strategy::dcfs;
  throw ConfigError("unknown strategy '" + name + "' (expected source, bn_adapt, tent or dcfs)");
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::source: return "source";
    case Strategy::bn_adapt: return "bn_adapt";
    case Strategy::tent: return "tent";
    case Strategy::dcfs: return "dcfs";
  }
  return "?";
}

void EngineConfig::validate() const {
  if (!(lambda_cdm >= 0.0) || !(lambda_scl >= 0.0)) throw ConfigError("lambda_cdm and lambda_scl must be >= 0");
  if (!(optimizer.lr >= 0.0)) throw ConfigError("learning rate must be >= 0");
  if (attention_reduction == 0) throw ConfigError("attention reduction must be positive");
  if (!(mixup.alpha > 0.0)) throw ConfigError("mixup alpha must be positive");
  if (!(cdm.lambda >= 0.0)) throw ConfigError("cdm lambda must be >= 0");
  if (scl.momentum < 0.0 || scl.momentum >= 1.0) throw ConfigError("scl momentum must lie in [0, 1)");
  if (!(scl.lambda_max > 0.0)) throw ConfigError("scl lambda_max must be positive");
}

template <typename T>
DcfsModel<T>::DcfsModel(Backbone<T> bb, std::size_t reduction, std::uint64_t seed)
    : backbone(std::move(bb)),
      attention(backbone.pooled_dim(), reduction, seed ^ 0xa77e9710ULL),
      heads(backbone.classifier) {}

template <typename T>
std::vector<nn::NamedParam<T>> DcfsModel<T>::named_parameters() const {
  auto out = backbone.extractor_parameters();
  attention.collect("attn/", out);
  heads.collect(out);
  return out;
}

template <typename T>
std::vector<ag::Var<T>> DcfsModel<T>::trainable_parameters() const {
  std::vector<ag::Var<T>> out;
  for (auto& p : backbone.extractor_parameters()) out.push_back(p.var);
  for (auto& p : attention.parameters()) out.push_back(p);
  out.push_back(heads.semantic.weight);
  out.push_back(heads.semantic.bias);
  return out;
}

template <typename T>
FeatureBundle<T> DcfsModel<T>::disentangled(const Tensor<float>& images) {
  return disentangle(backbone.features(as_input<T>(images)), attention);
}

template <typename T>
PredictionBundle<T> DcfsModel<T>::predict(const Tensor<float>& images) {
  return heads.predict(disentangled(images));
}

DcfsDraws draw_dcfs(const Tensor<float>& images, const EngineConfig& config, std::mt19937_64& rng) {
  DcfsDraws d;
  d.rho = sample_mixup_ratio(config.mixup, rng);
  d.augmented = augment(images, config.augment, rng);
  return d;
}

template <typename T>
DcfsLoss<T> dcfs_loss(DcfsModel<T>& model, const Tensor<float>& images, const DcfsDraws& draws,
                      const ConfidenceState& confidence, const EngineConfig& config) {
  DcfsLoss<T> out;
  const auto& on = config.losses;
  out.predictions = model.predict(images);
  const auto& pred = out.predictions;
  out.single = on.single ? loss_single(pred.combined, pred.whole, config.symmetric_consistency) : zero_scalar<T>();
  out.mixup = zero_scalar<T>();
  if (on.mixup) {
    if (images.dim(0) >= 2) {
      auto mixed = mixup_rolled(images, pred.combined, draws.rho, config.symmetric_consistency);
      auto mixed_pred = model.heads.predict_whole(model.backbone.features(as_input<T>(mixed.images)));
      out.mixup = loss_mixup(mixed.targets, mixed_pred);
      out.mixup_used = true;
    } else {
      spdlog::info("batch of one sample: mixup term skipped, consistency uses the single-sample term only");
    }
  }
  out.fdc = ag::add(out.single, out.mixup);
  out.cdm = on.cdm ? loss_cdm(pred.semantic, pred.domain, model.heads.semantic.weight, model.heads.domain.weight,
                              config.cdm)
                   : zero_scalar<T>();
  out.scl_step = scl_prepare(pred.whole.value(), confidence, config.scl);
  if (on.scl) {
    auto aug_pred = model.heads.predict_whole(model.backbone.features(as_input<T>(draws.augmented)));
    out.scl = loss_scl(out.scl_step, aug_pred);
  } else {
    out.scl = zero_scalar<T>();
  }
  out.total = ag::add(ag::add(out.fdc, ag::scale(out.cdm, static_cast<T>(config.lambda_cdm))),
                      ag::scale(out.scl, static_cast<T>(config.lambda_scl)));
  return out;
}

template <typename T>
ag::Var<T> entropy_loss(const ag::Var<T>& logits) {
  auto p = ag::softmax_rows(logits);
  return cross_entropy(p, p);
}

template <typename T>
Adapter<T>::Adapter(Backbone<T> backbone, EngineConfig config)
    : config_(std::move(config)), rng_(config_.seed) {
  config_.validate();
  model_ = std::make_unique<DcfsModel<T>>(std::move(backbone), config_.attention_reduction, config_.seed);
  auto& m = *model_;
  confidence_ = ConfidenceState::initial(m.backbone.num_classes());
  for (auto& p : m.backbone.named_parameters()) p.var.set_requires_grad(false);
  for (auto& p : m.attention.parameters()) p.set_requires_grad(false);
  m.heads.semantic.weight.set_requires_grad(false);
  m.heads.semantic.bias.set_requires_grad(false);
  switch (config_.strategy) {
    case Strategy::source:
      m.backbone.set_norm_mode(NormMode::source_stats);
      break;
    case Strategy::bn_adapt:
      m.backbone.set_norm_mode(NormMode::batch_stats);
      break;
    case Strategy::tent: {
      m.backbone.set_norm_mode(NormMode::batch_stats);
      auto affine = m.backbone.norm_affine_parameters();
      for (auto& p : affine) p.set_requires_grad(true);
      optimizer_ = std::make_unique<optim::Optimizer<T>>(affine, config_.optimizer);
      break;
    }
    case Strategy::dcfs: {
      m.backbone.set_norm_mode(NormMode::batch_stats);
      auto params = m.trainable_parameters();
      for (auto& p : params) p.set_requires_grad(true);
      optimizer_ = std::make_unique<optim::Optimizer<T>>(params, config_.optimizer);
      break;
    }
  }
}

template <typename T>
StepResult Adapter<T>::step(const Tensor<float>& images) {
  if (images.rank() != 4 || images.dim(0) == 0) {
    throw DataError("adapter expects a non-empty [B,3,H,W] batch, got " + to_string(images.shape()));
  }
  StepResult r;
  switch (config_.strategy) {
    case Strategy::dcfs: r = step_dcfs(images); break;
    case Strategy::tent: r = step_tent(images); break;
    default: r = step_inference(images); break;
  }
  ++steps_;
  return r;
}

template <typename T>
StepResult Adapter<T>::step_inference(const Tensor<float>& images) {
  ag::NoGradGuard guard;
  StepResult r;
  r.predictions = argmax_rows(model_->backbone.logits(as_input<T>(images)).value());
  r.whole_predictions = r.predictions;
  return r;
}

template <typename T>
StepResult Adapter<T>::step_tent(const Tensor<float>& images) {
  auto logits = model_->backbone.logits(as_input<T>(images));
  auto loss = entropy_loss(logits);
  StepResult r;
  r.predictions = argmax_rows(logits.value());
  r.whole_predictions = r.predictions;
  r.losses.total = scalar(loss);
  if (!std::isfinite(r.losses.total)) throw NumericError("tent: non-finite entropy at step " + std::to_string(steps_));
  optimizer_->zero_grad();
  loss.backward();
  optimizer_->step();
  return r;
}

template <typename T>
StepResult Adapter<T>::step_dcfs(const Tensor<float>& images) {
  const auto draws = draw_dcfs(images, config_, rng_);
  auto loss = dcfs_loss(*model_, images, draws, confidence_, config_);
  StepResult r;
  r.predictions = argmax_rows(loss.predictions.combined.value());
  r.whole_predictions = argmax_rows(loss.predictions.whole.value());
  auto& l = r.losses;
  l.total = scalar(loss.total);
  l.fdc = scalar(loss.fdc);
  l.single = scalar(loss.single);
  l.mixup = scalar(loss.mixup);
  l.cdm = scalar(loss.cdm);
  l.scl = scalar(loss.scl);
  l.rho = draws.rho;
  for (double w : loss.scl_step.weights) l.mean_weight += w;
  l.mean_weight /= static_cast<double>(loss.scl_step.weights.size());
  if (!std::isfinite(l.total)) {
    std::ostringstream msg;
    msg << "non-finite loss at step " << steps_ << ": single=" << l.single << " mixup=" << l.mixup
        << " cdm=" << l.cdm << " scl=" << l.scl << " batch_mu=" << loss.scl_step.stats.mean
        << " batch_var=" << loss.scl_step.stats.variance << " mu_t=" << confidence_.mu
        << " sigma2_t=" << confidence_.sigma2;
    throw NumericError(msg.str());
  }
  optimizer_->zero_grad();
  if (loss.total.requires_grad()) loss.total.backward();
  optimizer_->step();
  confidence_ = loss.scl_step.state;
  return r;
}

std::string RunRecord::to_json() const {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["domain"] = domain;
  j["severity"] = severity;
  j["batch_error"] = batch_error;
  j["loss_total"] = loss_total;
  j["loss_fdc"] = loss_fdc;
  j["loss_cdm"] = loss_cdm;
  j["loss_scl"] = loss_scl;
  j["mu_t"] = mu_t;
  j["sigma2_t"] = sigma2_t;
  j["mean_weight"] = mean_weight;
  return j.dump();
}

RunRecord RunRecord::from_json(const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    RunRecord r;
    r.step = j.at("step").get<std::size_t>();
    r.domain = j.at("domain").get<std::string>();
    r.severity = j.at("severity").get<int>();
    r.batch_error = j.at("batch_error").get<double>();
    r.loss_total = j.at("loss_total").get<double>();
    r.loss_fdc = j.at("loss_fdc").get<double>();
    r.loss_cdm = j.at("loss_cdm").get<double>();
    r.loss_scl = j.at("loss_scl").get<double>();
    r.mu_t = j.at("mu_t").get<double>();
    r.sigma2_t = j.at("sigma2_t").get<double>();
    r.mean_weight = j.at("mean_weight").get<double>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed run record: ") + e.what());
  }
}

void write_run_records(const std::filesystem::path& path, const std::vector<RunRecord>& records) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  for (const auto& r : records) f << r.to_json() << '\n';
  if (!f) throw IoError("write failed for " + path.string());
}

std::vector<RunRecord> read_run_records(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::vector<RunRecord> out;
  std::string line;
  while (std::getline(f, line))
    if (!line.empty()) out.push_back(RunRecord::from_json(line));
  return out;
}

template <typename T>
OnlineResult run_stream(DomainStream& stream, Adapter<T>& adapter, const std::string& method) {
  OnlineResult res;
  res.method = method.empty() ? to_string(adapter.config().strategy) : method;
  const auto classes = adapter.num_classes();
  for (const auto& d : stream.domains()) {
    res.domains.push_back(d.corruption);
    res.severities.push_back(d.severity);
  }
  res.predictions.assign(stream.num_domains(), {});
  std::vector<std::size_t> wrong(stream.num_domains(), 0), seen(stream.num_domains(), 0);
  stream.for_each_batch([&](const Batch& b) {
    if (b.images.dim(1) != 3) {
      throw DataError("stream images have " + std::to_string(b.images.dim(1)) + " channels, model expects 3");
    }
    for (int y : b.labels) {
      if (y < 0 || static_cast<std::size_t>(y) >= classes) {
        throw DataError("stream label " + std::to_string(y) + " outside the model's " + std::to_string(classes) +
                        " classes");
      }
    }
    const auto step = adapter.steps();
    auto r = adapter.step(b.images);
    std::size_t mistakes = 0;
    for (std::size_t i = 0; i < r.predictions.size(); ++i) mistakes += r.predictions[i] != b.labels[i];
    wrong[b.domain] += mistakes;
    seen[b.domain] += b.labels.size();
    auto& preds = res.predictions[b.domain];
    preds.insert(preds.end(), r.predictions.begin(), r.predictions.end());
    RunRecord rec;
    rec.step = step;
    rec.domain = res.domains[b.domain];
    rec.severity = res.severities[b.domain];
    rec.batch_error = 100.0 * static_cast<double>(mistakes) / static_cast<double>(b.labels.size());
    rec.loss_total = r.losses.total;
    rec.loss_fdc = r.losses.fdc;
    rec.loss_cdm = r.losses.cdm;
    rec.loss_scl = r.losses.scl;
    rec.mu_t = adapter.confidence().mu;
    rec.sigma2_t = adapter.confidence().sigma2;
    rec.mean_weight = r.losses.mean_weight;
    res.records.push_back(std::move(rec));
  });
  double total = 0.0;
  for (std::size_t d = 0; d < stream.num_domains(); ++d) {
    if (seen[d] == 0) throw DataError("domain " + res.domains[d] + " produced no samples");
    res.domain_error.push_back(100.0 * static_cast<double>(wrong[d]) / static_cast<double>(seen[d]));
    total += res.domain_error.back();
    spdlog::info("{} {}-{}: error {:.2f}%", res.method, res.domains[d], res.severities[d], res.domain_error.back());
  }
  res.mean_error = total / static_cast<double>(stream.num_domains());
  return res;
}

template struct DcfsModel<float>;
template struct DcfsModel<double>;
template class Adapter<float>;
template class Adapter<double>;
template DcfsLoss<float> dcfs_loss<float>(DcfsModel<float>&, const Tensor<float>&, const DcfsDraws&,
                                          const ConfidenceState&, const EngineConfig&);
template DcfsLoss<double> dcfs_loss<double>(DcfsModel<double>&, const Tensor<float>&, const DcfsDraws&,
                                            const ConfidenceState&, const EngineConfig&);
template ag::Var<float> entropy_loss<float>(const ag::Var<float>&);
template ag::Var<double> entropy_loss<double>(const ag::Var<double>&);
template OnlineResult run_stream<float>(DomainStream&, Adapter<float>&, const std::string&);
template OnlineResult run_stream<double>(DomainStream&, Adapter<double>&, const std::string&);

}  // namespace ctta
