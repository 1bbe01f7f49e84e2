#include "ctta/config.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <sstream>

namespace ctta {

using nlohmann::json;

namespace {

const char* kDefaults = R"({
  "seed": 0,
  "seeds": [],
  "output_dir": null,
  "dataset": {
    "source": {"num_samples": 5000, "image_size": 16, "num_classes": 10, "pixel_noise": 0.03, "seed": 1},
    "eval": {"num_samples": 2000, "seed": 2},
    "stream": {
      "source": "synthetic",
      "root": "",
      "corruptions": [],
      "severity": 5,
      "batch_size": 200,
      "samples_per_domain": 0,
      "clean_seed": 100,
      "severity_table": {}
    }
  },
  "model": {
    "arch": "small_cnn",
    "checkpoint": null,
    "widths": [32, 64, 128, 128],
    "widen_factor": 10,
    "input_mean": [0.0, 0.0, 0.0],
    "input_std": [1.0, 1.0, 1.0]
  },
  "pretrain": {"epochs": 30, "lr": 0.001, "batch_size": 64, "weight_decay": 0.0005},
  "method": {
    "strategy": "dcfs",
    "lambda_cdm": 1.0,
    "lambda_scl": 1.0,
    "alpha": 1.0,
    "momentum": 0.999,
    "reduction": 8,
    "cdm_lambda": 0.1,
    "lambda_max": 1.0,
    "symmetric_consistency": false,
    "hard_labels": false,
    "per_batch_class_mean": false,
    "losses": {"single": true, "mixup": true, "cdm": true, "scl": true},
    "augment": {"flip_prob": 0.5, "crop_padding": 4, "brightness": 0.2, "contrast": 0.2}
  },
  "optimizer": {"kind": "adam", "lr": 0.001, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8, "momentum": 0.9,
                "weight_decay": 0.0},
  "sweep": {"param": "lambda_cdm", "values": [], "spread_threshold": 3.0}
})";

// Objects whose keys are free-form.
bool is_open_map(const std::string& path) { return path == "dataset.stream.severity_table"; }

const std::vector<std::string>& required_keys() {
  static const std::vector<std::string> keys = {"output_dir", "model.checkpoint"};
  return keys;
}

void merge(json& base, const json& user, const std::string& prefix) {
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + path + "'");
    auto& slot = base[it.key()];
    if (slot.is_object() && !is_open_map(path)) {
      if (!it.value().is_object()) throw ConfigError("config key '" + path + "' must be an object");
      merge(slot, it.value(), path);
    } else {
      slot = it.value();
    }
  }
}

const json* find_path(const json& doc, const std::string& path) {
  const json* cur = &doc;
  std::istringstream is(path);
  std::string part;
  while (std::getline(is, part, '.')) {
    if (!cur->is_object() || !cur->contains(part)) return nullptr;
    cur = &(*cur)[part];
  }
  return cur;
}

void apply_override(json& doc, const Override& o) {
  json* cur = &doc;
  std::istringstream is(o.path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(is, part, '.')) parts.push_back(part);
  if (parts.empty()) throw ConfigError("empty override key");
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!cur->is_object()) throw ConfigError("override '" + o.path + "' descends into a non-object");
    cur = &(*cur)[parts[i]];
    if (cur->is_null()) *cur = json::object();
  }
  json value = o.value;
  if (!o.literal) {
    try {
      value = json::parse(o.value);
    } catch (const json::exception&) {
      value = o.value;
    }
  }
  (*cur)[parts.back()] = value;
}

template <typename T>
T get(const json& doc, const std::string& path) {
  const json* v = find_path(doc, path);
  if (!v) throw ConfigError("missing config key '" + path + "'");
  try {
    return v->get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config key '" + path + "' has the wrong type: " + e.what());
  }
}

template <typename T, std::size_t N>
std::array<T, N> get_array(const json& doc, const std::string& path) {
  auto v = get<std::vector<T>>(doc, path);
  if (v.size() != N) throw ConfigError("config key '" + path + "' must have " + std::to_string(N) + " entries");
  std::array<T, N> out{};
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

std::size_t get_count(const json& doc, const std::string& path) {
  const auto v = get<long long>(doc, path);
  if (v < 0) throw ConfigError("config key '" + path + "' must be non-negative");
  return static_cast<std::size_t>(v);
}

}  // namespace

std::string default_config_json() { return json::parse(kDefaults).dump(2); }

Override parse_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key.path=value: " + assignment);
  return {assignment.substr(0, eq), assignment.substr(eq + 1)};
}

RunConfig parse_config(const std::string& json_text, const std::vector<Override>& overrides) {
  json user;
  try {
    user = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!user.is_object()) throw ConfigError("config document must be a JSON object");
  for (const auto& o : overrides) apply_override(user, o);
  for (const auto& key : required_keys()) {
    const json* v = find_path(user, key);
    if (!v || v->is_null()) throw ConfigError("missing required config key '" + key + "'");
  }
  json doc = json::parse(kDefaults);
  merge(doc, user, "");

  RunConfig c;
  c.seed = get<std::uint64_t>(doc, "seed");
  c.seeds = get<std::vector<std::uint64_t>>(doc, "seeds");
  c.output_dir = get<std::string>(doc, "output_dir");

  c.source_data.num_samples = get_count(doc, "dataset.source.num_samples");
  c.source_data.image_size = get_count(doc, "dataset.source.image_size");
  c.source_data.num_classes = get_count(doc, "dataset.source.num_classes");
  c.source_data.pixel_noise = get<double>(doc, "dataset.source.pixel_noise");
  c.source_data.seed = get<std::uint64_t>(doc, "dataset.source.seed");
  c.eval_data = c.source_data;
  c.eval_data.num_samples = get_count(doc, "dataset.eval.num_samples");
  c.eval_data.seed = get<std::uint64_t>(doc, "dataset.eval.seed");

  auto& s = c.stream;
  s.source = parse_stream_source(get<std::string>(doc, "dataset.stream.source"));
  s.root = get<std::string>(doc, "dataset.stream.root");
  s.corruptions = get<std::vector<std::string>>(doc, "dataset.stream.corruptions");
  s.severity = get<int>(doc, "dataset.stream.severity");
  s.batch_size = get_count(doc, "dataset.stream.batch_size");
  s.samples_per_domain = get_count(doc, "dataset.stream.samples_per_domain");
  c.stream_clean_seed = get<std::uint64_t>(doc, "dataset.stream.clean_seed");
  for (const auto& [name, values] : doc["dataset"]["stream"]["severity_table"].items()) {
    identity_parameter(name);
    s.table[name] = get_array<double, 5>(doc, "dataset.stream.severity_table." + name);
    (void)values;
  }
  if (s.severity < 1 || s.severity > 5) throw ConfigError("dataset.stream.severity must be in 1..5");
  if (s.batch_size == 0) throw ConfigError("dataset.stream.batch_size must be positive");

  c.arch = get<std::string>(doc, "model.arch");
  parse_arch(c.arch);
  c.checkpoint = get<std::string>(doc, "model.checkpoint");
  c.backbone.widths = get<std::vector<std::size_t>>(doc, "model.widths");
  c.backbone.widen_factor = get_count(doc, "model.widen_factor");
  c.backbone.input_mean = get_array<double, 3>(doc, "model.input_mean");
  c.backbone.input_std = get_array<double, 3>(doc, "model.input_std");

  c.pretrain.epochs = get_count(doc, "pretrain.epochs");
  c.pretrain.options.lr = get<double>(doc, "pretrain.lr");
  c.pretrain.options.batch_size = get_count(doc, "pretrain.batch_size");
  c.pretrain.options.weight_decay = get<double>(doc, "pretrain.weight_decay");

  auto& e = c.engine;
  e.strategy = parse_strategy(get<std::string>(doc, "method.strategy"));
  e.lambda_cdm = get<double>(doc, "method.lambda_cdm");
  e.lambda_scl = get<double>(doc, "method.lambda_scl");
  e.mixup.alpha = get<double>(doc, "method.alpha");
  e.scl.momentum = get<double>(doc, "method.momentum");
  e.attention_reduction = get_count(doc, "method.reduction");
  e.cdm.lambda = get<double>(doc, "method.cdm_lambda");
  e.scl.lambda_max = get<double>(doc, "method.lambda_max");
  e.symmetric_consistency = get<bool>(doc, "method.symmetric_consistency");
  e.scl.hard_labels = get<bool>(doc, "method.hard_labels");
  e.scl.per_batch_class_mean = get<bool>(doc, "method.per_batch_class_mean");
  e.losses.single = get<bool>(doc, "method.losses.single");
  e.losses.mixup = get<bool>(doc, "method.losses.mixup");
  e.losses.cdm = get<bool>(doc, "method.losses.cdm");
  e.losses.scl = get<bool>(doc, "method.losses.scl");
  e.augment.flip_prob = get<double>(doc, "method.augment.flip_prob");
  e.augment.crop_padding = get_count(doc, "method.augment.crop_padding");
  e.augment.brightness = get<double>(doc, "method.augment.brightness");
  e.augment.contrast = get<double>(doc, "method.augment.contrast");
  e.optimizer.kind = optim::parse_optimizer_kind(get<std::string>(doc, "optimizer.kind"));
  e.optimizer.lr = get<double>(doc, "optimizer.lr");
  e.optimizer.beta1 = get<double>(doc, "optimizer.beta1");
  e.optimizer.beta2 = get<double>(doc, "optimizer.beta2");
  e.optimizer.eps = get<double>(doc, "optimizer.eps");
  e.optimizer.momentum = get<double>(doc, "optimizer.momentum");
  e.optimizer.weight_decay = get<double>(doc, "optimizer.weight_decay");
  e.seed = c.seed;
  e.validate();

  c.sweep.param = get<std::string>(doc, "sweep.param");
  if (c.sweep.param != "lambda_cdm" && c.sweep.param != "lambda_scl") {
    throw ConfigError("sweep.param must be lambda_cdm or lambda_scl");
  }
  c.sweep.values = get<std::vector<double>>(doc, "sweep.values");
  c.sweep.spread_threshold = get<double>(doc, "sweep.spread_threshold");

  c.document = doc.dump(2);
  return c;
}

RunConfig load_config(const std::filesystem::path& path, const std::vector<Override>& overrides) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), overrides);
}

}  // namespace ctta
