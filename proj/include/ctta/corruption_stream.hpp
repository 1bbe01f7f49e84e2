#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "ctta/dataset.hpp"

namespace ctta {

/// The 15 benchmark corruptions in table order (file stems of the distributed arrays).
const std::vector<std::string>& benchmark_corruptions();

/// Corruptions this library can synthesize, in benchmark order.
const std::vector<std::string>& synthetic_corruptions();

/// Table column for a corruption name ("gaussian_noise" -> "gaussian"). The synthetic gaussian_blur
/// fills the defocus column.
std::string column_name(const std::string& corruption);

/// Severity 1..5 -> corruption parameter.
using SeverityTable = std::map<std::string, std::array<double, 5>>;

/// Defaults tuned for 16x16 toy images.
///   gaussian_noise: noise std; shot_noise: photon count per unit intensity; impulse_noise: flip fraction;
///   gaussian_blur: kernel std in pixels; brightness: additive shift; contrast: factor around the image mean;
///   pixelate: side length of the coarse grid as a fraction of the image side.
const SeverityTable& default_severity_table();

struct CorruptionSpec {
  std::string name;
  double parameter = 0.0;
  std::uint64_t seed = 0;
};

/// Parameter value at which a corruption is the identity.
double identity_parameter(const std::string& corruption);

/// Applies one corruption to [B,C,H,W] images in [0,1]; output is clipped to [0,1].
/// Throws ConfigError for unknown names.
Tensor<float> synthesize_corruption(const Tensor<float>& clean, const CorruptionSpec& spec);

/// Severity 0 returns the input unchanged; 1..5 read the table.
Tensor<float> synthesize_corruption(const Tensor<float>& clean, const std::string& name, int severity,
                                    std::uint64_t seed, const SeverityTable& table = default_severity_table());

/// Rows of severity s from `<root>/<corruption>.npy` (uint8 [N,H,W,3]) and `<root>/labels.npy`.
/// Each severity owns N/5 consecutive rows: [(s-1) N/5, s N/5). `limit` > 0 keeps the first `limit` rows.
LabeledDataset load_corruption_files(const std::filesystem::path& root, const std::string& corruption, int severity,
                                     std::size_t limit = 0);

enum class StreamSource { synthetic, files };
StreamSource parse_stream_source(const std::string& s);
std::string to_string(StreamSource s);

struct StreamConfig {
  StreamSource source = StreamSource::synthetic;
  std::filesystem::path root;           // file-backed mode
  std::vector<std::string> corruptions;  // empty -> default order for the source
  int severity = 5;
  std::size_t batch_size = 64;
  std::size_t samples_per_domain = 0;  // 0 -> every available sample
  std::uint64_t seed = 0;
  SeverityTable table = default_severity_table();
};

struct Batch {
  std::size_t domain = 0;
  std::size_t index = 0;  // batch index within the domain
  std::size_t offset = 0;  // first sample row within the domain
  Tensor<float> images;
  std::vector<int> labels;
};

/// Ordered sequence of corruption domains. Domains are materialized lazily, one at a time.
class DomainStream {
 public:
  struct DomainInfo {
    std::string corruption;
    int severity = 0;
  };
  using Loader = std::function<LabeledDataset(std::size_t index, const DomainInfo&)>;

  DomainStream(std::vector<DomainInfo> domains, std::size_t batch_size, StreamSource source, Loader loader);

  std::size_t num_domains() const { return domains_.size(); }
  const std::vector<DomainInfo>& domains() const { return domains_; }
  std::size_t batch_size() const { return batch_size_; }
  StreamSource source() const { return source_; }

  /// Loads (or returns the cached) domain data; loading another domain evicts the previous one.
  const LabeledDataset& domain_data(std::size_t index);

  /// Visits every batch of every domain in order; the final partial batch of a domain is kept.
  void for_each_batch(const std::function<void(const Batch&)>& visit);

 private:
  std::vector<DomainInfo> domains_;
  std::size_t batch_size_;
  StreamSource source_;
  Loader loader_;
  std::size_t cached_ = static_cast<std::size_t>(-1);
  LabeledDataset cache_;
};

/// Batch boundaries [begin, end) for n samples.
std::vector<std::pair<std::size_t, std::size_t>> partition(std::size_t n, std::size_t batch_size);

/// Synthetic streams corrupt `clean` per domain with a seed derived from (config.seed, domain index).
DomainStream build_stream(const StreamConfig& config, std::shared_ptr<const LabeledDataset> clean = nullptr);

}  // namespace ctta
