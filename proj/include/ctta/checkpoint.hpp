#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "ctta/tensor.hpp"

namespace ctta {

/// Named float32 arrays plus string metadata, persisted as a stored .npz archive with entries
/// `param/<name>.npy` and a JSON `meta` record.
struct Checkpoint {
  std::map<std::string, Tensor<float>> params;
  std::map<std::string, std::string> meta;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  /// Throws DataError when the key is absent.
  const std::string& meta_value(const std::string& key) const;
  const Tensor<float>& param(const std::string& name) const;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

}  // namespace ctta
