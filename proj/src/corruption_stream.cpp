#include "ctta/corruption_stream.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>

#include "ctta/npy.hpp"

namespace ctta {

namespace {

const std::map<std::string, std::string>& column_map() {
  static const std::map<std::string, std::string> m = {
      {"gaussian_noise", "gaussian"}, {"shot_noise", "shot"},     {"impulse_noise", "impulse"},
      {"defocus_blur", "defocus"},    {"gaussian_blur", "defocus"}, {"glass_blur", "glass"},
      {"motion_blur", "motion"},      {"zoom_blur", "zoom"},      {"snow", "snow"},
      {"frost", "frost"},             {"fog", "fog"},             {"brightness", "brightness"},
      {"contrast", "contrast"},       {"elastic_transform", "elastic"}, {"pixelate", "pixelate"},
      {"jpeg_compression", "jpeg"}};
  return m;
}

std::size_t reflect(long i, long n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
  return static_cast<std::size_t>(i);
}

void clip(Tensor<float>& t) {
  for (auto& v : t.values()) v = std::clamp(v, 0.0f, 1.0f);
}

Tensor<float> gaussian_blur(const Tensor<float>& x, double sigma) {
  if (sigma <= 0.0) return x;
  const long radius = std::max(1L, static_cast<long>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double total = 0.0;
  for (long i = -radius; i <= radius; ++i) total += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= total;
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<float> tmp(x.shape()), out(x.shape());
  for (std::size_t p = 0; p < planes; ++p) {
    const float* src = x.data() + p * h * w;
    float* mid = tmp.data() + p * h * w;
    float* dst = out.data() + p * h * w;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t c = 0; c < w; ++c) {
        double acc = 0.0;
        for (long i = -radius; i <= radius; ++i)
          acc += k[i + radius] * src[y * w + reflect(static_cast<long>(c) + i, static_cast<long>(w))];
        mid[y * w + c] = static_cast<float>(acc);
      }
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t c = 0; c < w; ++c) {
        double acc = 0.0;
        for (long i = -radius; i <= radius; ++i)
          acc += k[i + radius] * mid[reflect(static_cast<long>(y) + i, static_cast<long>(h)) * w + c];
        dst[y * w + c] = static_cast<float>(acc);
      }
  }
  return out;
}

// Area downsample onto a coarse grid, then nearest-neighbour upsample back.
Tensor<float> pixelate(const Tensor<float>& x, double fraction) {
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto gh = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(h * fraction)), 1, h);
  const auto gw = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(w * fraction)), 1, w);
  if (gh == h && gw == w) return x;
  Tensor<float> out(x.shape());
  std::vector<double> cell(gh * gw), area(gh * gw);
  for (std::size_t p = 0; p < planes; ++p) {
    const float* src = x.data() + p * h * w;
    float* dst = out.data() + p * h * w;
    std::fill(cell.begin(), cell.end(), 0.0);
    std::fill(area.begin(), area.end(), 0.0);
    // Exact box integration: source pixel [y, y+1) overlaps coarse rows by their shared length.
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t c = 0; c < w; ++c) {
        const double y0 = static_cast<double>(y) * gh / h, y1 = static_cast<double>(y + 1) * gh / h;
        const double c0 = static_cast<double>(c) * gw / w, c1 = static_cast<double>(c + 1) * gw / w;
        for (auto gy = static_cast<std::size_t>(y0); gy < gh && gy < y1; ++gy) {
          const double oy = std::min<double>(gy + 1, y1) - std::max<double>(gy, y0);
          if (oy <= 0) continue;
          for (auto gx = static_cast<std::size_t>(c0); gx < gw && gx < c1; ++gx) {
            const double ox = std::min<double>(gx + 1, c1) - std::max<double>(gx, c0);
            if (ox <= 0) continue;
            cell[gy * gw + gx] += oy * ox * src[y * w + c];
            area[gy * gw + gx] += oy * ox;
          }
        }
      }
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t c = 0; c < w; ++c) {
        const std::size_t gy = std::min(gh - 1, (2 * y + 1) * gh / (2 * h));
        const std::size_t gx = std::min(gw - 1, (2 * c + 1) * gw / (2 * w));
        dst[y * w + c] = static_cast<float>(cell[gy * gw + gx] / area[gy * gw + gx]);
      }
  }
  return out;
}

}  // namespace

const std::vector<std::string>& benchmark_corruptions() {
  static const std::vector<std::string> v = {
      "gaussian_noise", "shot_noise", "impulse_noise", "defocus_blur",      "glass_blur",
      "motion_blur",    "zoom_blur",  "snow",          "frost",             "fog",
      "brightness",     "contrast",   "elastic_transform", "pixelate",      "jpeg_compression"};
  return v;
}

const std::vector<std::string>& synthetic_corruptions() {
  static const std::vector<std::string> v = {"gaussian_noise", "shot_noise", "impulse_noise", "gaussian_blur",
                                             "brightness",     "contrast",   "pixelate"};
  return v;
}

std::string column_name(const std::string& corruption) {
  auto it = column_map().find(corruption);
  if (it == column_map().end()) throw ConfigError("unknown corruption '" + corruption + "'");
  return it->second;
}

const SeverityTable& default_severity_table() {
  static const SeverityTable t = {
      {"gaussian_noise", {0.08, 0.12, 0.18, 0.26, 0.38}},
      {"shot_noise", {60.0, 25.0, 12.0, 5.0, 3.0}},
      {"impulse_noise", {0.03, 0.06, 0.09, 0.17, 0.27}},
      {"gaussian_blur", {0.4, 0.6, 0.8, 1.1, 1.5}},
      {"brightness", {0.1, 0.2, 0.3, 0.4, 0.5}},
      {"contrast", {0.75, 0.5, 0.4, 0.3, 0.15}},
      {"pixelate", {0.75, 0.625, 0.5, 0.375, 0.25}},
  };
  return t;
}

double identity_parameter(const std::string& corruption) {
  if (corruption == "contrast" || corruption == "pixelate") return 1.0;
  if (corruption == "shot_noise") return 0.0;  // 0 photons/unit is read as "no shot noise"
  if (std::find(synthetic_corruptions().begin(), synthetic_corruptions().end(), corruption) ==
      synthetic_corruptions().end()) {
    throw ConfigError("cannot synthesize corruption '" + corruption + "'");
  }
  return 0.0;
}

Tensor<float> synthesize_corruption(const Tensor<float>& clean, const CorruptionSpec& spec) {
  if (clean.rank() != 4) throw ConfigError("corruption expects [B,C,H,W], got " + to_string(clean.shape()));
  const double p = spec.parameter;
  const double identity = identity_parameter(spec.name);
  if (p == identity) return clean;
  std::mt19937_64 rng(spec.seed);
  Tensor<float> out = clean;
  const std::string& n = spec.name;
  if (n == "gaussian_noise") {
    if (p < 0) throw ConfigError("gaussian_noise std must be non-negative");
    std::normal_distribution<double> noise(0.0, p);
    for (auto& v : out.values()) v = static_cast<float>(v + noise(rng));
  } else if (n == "shot_noise") {
    if (p < 0) throw ConfigError("shot_noise rate must be positive");
    for (auto& v : out.values()) {
      std::poisson_distribution<long> draw(std::max(0.0, static_cast<double>(v)) * p);
      v = static_cast<float>(static_cast<double>(draw(rng)) / p);
    }
  } else if (n == "impulse_noise") {
    if (p < 0 || p > 1) throw ConfigError("impulse_noise amount must lie in [0, 1]");
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (auto& v : out.values()) {
      const double u = unit(rng);
      if (u < p / 2) v = 0.0f;
      else if (u < p) v = 1.0f;
    }
  } else if (n == "gaussian_blur") {
    if (p < 0) throw ConfigError("gaussian_blur std must be non-negative");
    out = gaussian_blur(clean, p);
  } else if (n == "brightness") {
    for (auto& v : out.values()) v = static_cast<float>(v + p);
  } else if (n == "contrast") {
    if (p < 0) throw ConfigError("contrast factor must be non-negative");
    const std::size_t per = clean.size() / clean.dim(0);
    for (std::size_t b = 0; b < clean.dim(0); ++b) {
      float* img = out.data() + b * per;
      double mean = 0.0;
      for (std::size_t k = 0; k < per; ++k) mean += img[k];
      mean /= static_cast<double>(per);
      for (std::size_t k = 0; k < per; ++k) img[k] = static_cast<float>((img[k] - mean) * p + mean);
    }
  } else if (n == "pixelate") {
    if (p <= 0 || p > 1) throw ConfigError("pixelate fraction must lie in (0, 1]");
    out = pixelate(clean, p);
  }
  clip(out);
  return out;
}

Tensor<float> synthesize_corruption(const Tensor<float>& clean, const std::string& name, int severity,
                                    std::uint64_t seed, const SeverityTable& table) {
  if (severity < 0 || severity > 5) throw ConfigError("severity must be in 0..5, got " + std::to_string(severity));
  if (severity == 0) {
    identity_parameter(name);
    return clean;
  }
  auto it = table.find(name);
  if (it == table.end()) throw ConfigError("no severity table entry for corruption '" + name + "'");
  return synthesize_corruption(clean, CorruptionSpec{name, it->second[severity - 1], seed});
}

LabeledDataset load_corruption_files(const std::filesystem::path& root, const std::string& corruption, int severity,
                                     std::size_t limit) {
  if (severity < 1 || severity > 5) throw ConfigError("severity must be in 1..5, got " + std::to_string(severity));
  const auto data_path = root / (corruption + ".npy");
  const auto label_path = root / "labels.npy";
  for (const auto& p : {data_path, label_path})
    if (!std::filesystem::exists(p)) throw IoError("missing corruption file " + p.string());
  const auto header = npy::read_header(data_path);
  if (header.dtype != "|u1" || header.shape.size() != 4 || header.shape[3] != 3 || header.fortran_order) {
    throw DataError(data_path.string() + ": expected uint8 [N,H,W,3], got " + header.dtype + " " +
                    to_string(header.shape));
  }
  const std::size_t total = header.shape[0];
  if (total == 0 || total % 5 != 0) throw DataError(data_path.string() + ": row count not divisible by 5");
  const auto labels_all = npy::decode_int(npy::read_file(label_path));
  if (labels_all.size() != total) {
    throw DataError("labels.npy has " + std::to_string(labels_all.size()) + " rows, " + corruption + " has " +
                    std::to_string(total));
  }
  const std::size_t per = total / 5;
  const std::size_t begin = static_cast<std::size_t>(severity - 1) * per;
  const std::size_t count = limit > 0 ? std::min(limit, per) : per;
  const auto raw = npy::read_rows(data_path, header, begin, begin + count);
  LabeledDataset d;
  d.name = corruption + "-" + std::to_string(severity);
  d.images = nhwc_u8_to_nchw(raw, count, header.shape[1], header.shape[2], 3);
  d.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) d.labels[i] = static_cast<int>(labels_all[begin + i]);
  return d;
}

StreamSource parse_stream_source(const std::string& s) {
  if (s == "synthetic") return StreamSource::synthetic;
  if (s == "files") return StreamSource::files;
  throw ConfigError("unknown stream source '" + s + "' (expected synthetic or files)");
}

std::string to_string(StreamSource s) { return s == StreamSource::synthetic ? "synthetic" : "files"; }

std::vector<std::pair<std::size_t, std::size_t>> partition(std::size_t n, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t b = 0; b < n; b += batch_size) out.emplace_back(b, std::min(n, b + batch_size));
  return out;
}

DomainStream::DomainStream(std::vector<DomainInfo> domains, std::size_t batch_size, StreamSource source, Loader loader)
    : domains_(std::move(domains)), batch_size_(batch_size), source_(source), loader_(std::move(loader)) {
  if (domains_.empty()) throw ConfigError("domain stream needs at least one domain");
  if (batch_size_ == 0) throw ConfigError("batch size must be positive");
}

const LabeledDataset& DomainStream::domain_data(std::size_t index) {
  if (index >= domains_.size()) throw ConfigError("domain index out of range");
  if (cached_ != index) {
    cache_ = loader_(index, domains_[index]);
    cached_ = index;
    spdlog::debug("loaded domain {} ({} samples)", cache_.name, cache_.size());
  }
  return cache_;
}

void DomainStream::for_each_batch(const std::function<void(const Batch&)>& visit) {
  for (std::size_t d = 0; d < domains_.size(); ++d) {
    const auto& data = domain_data(d);
    std::size_t index = 0;
    for (auto [begin, end] : partition(data.size(), batch_size_)) {
      auto part = subset(data, begin, end);
      Batch b{d, index++, begin, std::move(part.images), std::move(part.labels)};
      visit(b);
    }
  }
}

DomainStream build_stream(const StreamConfig& config, std::shared_ptr<const LabeledDataset> clean) {
  if (config.severity < 1 || config.severity > 5) {
    throw ConfigError("severity must be in 1..5, got " + std::to_string(config.severity));
  }
  std::vector<std::string> names = config.corruptions;
  if (names.empty()) {
    names = config.source == StreamSource::files ? benchmark_corruptions() : synthetic_corruptions();
  }
  std::vector<DomainStream::DomainInfo> domains;
  for (const auto& n : names) {
    column_name(n);
    domains.push_back({n, config.severity});
  }
  if (config.source == StreamSource::files) {
    if (config.root.empty()) throw ConfigError("file-backed stream needs a root directory");
    auto root = config.root;
    auto limit = config.samples_per_domain;
    return DomainStream(std::move(domains), config.batch_size, config.source,
                        [root, limit](std::size_t, const DomainStream::DomainInfo& d) {
                          return load_corruption_files(root, d.corruption, d.severity, limit);
                        });
  }
  if (!clean) throw ConfigError("synthetic stream needs a clean dataset");
  for (const auto& n : names) {
    identity_parameter(n);
    if (!config.table.count(n)) throw ConfigError("no severity table entry for corruption '" + n + "'");
  }
  const std::size_t count =
      config.samples_per_domain > 0 ? std::min(config.samples_per_domain, clean->size()) : clean->size();
  auto table = config.table;
  const auto seed = config.seed;
  return DomainStream(std::move(domains), config.batch_size, config.source,
                      [clean, count, table, seed](std::size_t pos, const DomainStream::DomainInfo& d) {
                        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                                          static_cast<std::uint32_t>(pos), 0x5eedu};
                        std::array<std::uint32_t, 2> words{};
                        seq.generate(words.begin(), words.end());
                        const std::uint64_t s = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
                        auto base = subset(*clean, 0, count);
                        LabeledDataset out;
                        out.name = d.corruption + "-" + std::to_string(d.severity);
                        out.images = synthesize_corruption(base.images, d.corruption, d.severity, s, table);
                        out.labels = std::move(base.labels);
                        return out;
                      });
}

}  // namespace ctta
