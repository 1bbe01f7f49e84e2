#include "ctta/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include "ctta/npy.hpp"

namespace ctta {

namespace {
constexpr std::string_view kParamPrefix = "param/";
constexpr std::string_view kNpySuffix = ".npy";
}  // namespace

void Checkpoint::save(const std::filesystem::path& path) const {
  std::vector<std::pair<std::string, std::string>> entries;
  entries.reserve(params.size() + 1);
  for (const auto& [name, tensor] : params) {
    entries.emplace_back(std::string(kParamPrefix) + name + std::string(kNpySuffix), npy::encode(tensor));
  }
  nlohmann::json meta_json(meta);
  entries.emplace_back("meta", meta_json.dump(1));
  npy::write_npz(path, entries);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("checkpoint not found: " + path.string());
  Checkpoint ckpt;
  for (auto& [entry, data] : npy::read_npz(path)) {
    if (entry == "meta") {
      try {
        ckpt.meta = nlohmann::json::parse(data).get<std::map<std::string, std::string>>();
      } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint meta record is malformed: " + std::string(e.what()));
      }
      continue;
    }
    if (!entry.starts_with(kParamPrefix)) continue;
    std::string name = entry.substr(kParamPrefix.size());
    if (name.ends_with(kNpySuffix)) name.resize(name.size() - kNpySuffix.size());
    ckpt.params.emplace(std::move(name), npy::decode_float(data));
  }
  return ckpt;
}

const std::string& Checkpoint::meta_value(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) throw DataError("checkpoint metadata lacks '" + key + "'");
  return it->second;
}

const Tensor<float>& Checkpoint::param(const std::string& name) const {
  auto it = params.find(name);
  if (it == params.end()) throw DataError("checkpoint lacks parameter '" + name + "'");
  return it->second;
}

}  // namespace ctta
