#include "ctta/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

namespace ctta {

std::size_t LabeledDataset::num_classes_hint() const {
  int top = -1;
  for (int l : labels) top = std::max(top, l);
  return static_cast<std::size_t>(top + 1);
}

LabeledDataset subset(const LabeledDataset& data, std::size_t begin, std::size_t end) {
  LabeledDataset out;
  out.name = data.name;
  out.images = slice_rows(data.images, begin, end);
  out.labels.assign(data.labels.begin() + static_cast<long>(begin), data.labels.begin() + static_cast<long>(end));
  return out;
}

void validate_labels(const LabeledDataset& data, std::size_t num_classes) {
  if (data.images.rank() != 4 || data.images.dim(0) != data.labels.size()) {
    throw DataError("dataset '" + data.name + "': image tensor " + to_string(data.images.shape()) +
                    " does not match " + std::to_string(data.labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < data.labels.size(); ++i) {
    const int l = data.labels[i];
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes) {
      throw DataError("dataset '" + data.name + "': label " + std::to_string(l) + " at row " + std::to_string(i) +
                      " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

namespace {

bool pattern_mask(int cls, double u, double v, double cx, double cy, double s, double freq, double phase) {
  constexpr double pi = std::numbers::pi;
  const double du = (u - cx) / s, dv = (v - cy) / s;
  const double r = std::hypot(du, dv);
  const double a = (du + dv) / std::numbers::sqrt2, b = (du - dv) / std::numbers::sqrt2;
  switch (cls) {
    case 0: return std::sin(pi * freq * v + phase) > 0.0;
    case 1: return std::sin(pi * freq * u + phase) > 0.0;
    case 2: return std::sin(pi * freq * (u + v) / std::numbers::sqrt2 + phase) > 0.0;
    case 3: return std::sin(pi * freq * (u - v) / std::numbers::sqrt2 + phase) > 0.0;
    case 4: return r < 0.8;
    case 5: return r > 0.5 && r < 0.95;
    case 6: return std::max(std::abs(du), std::abs(dv)) < 0.7;
    case 7: return (std::abs(du) < 0.25 && std::abs(dv) < 0.95) || (std::abs(dv) < 0.25 && std::abs(du) < 0.95);
    case 8: return (std::abs(a) < 0.25 && std::abs(b) < 0.95) || (std::abs(b) < 0.25 && std::abs(a) < 0.95);
    default: return std::sin(pi * 0.7 * freq * u + phase) * std::sin(pi * 0.7 * freq * v + phase) > 0.0;
  }
}

double luminance(const std::array<double, 3>& c) { return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]; }

}  // namespace

LabeledDataset make_toy_dataset(const ToyDatasetOptions& options) {
  if (options.num_classes < 2 || options.num_classes > 10) {
    throw ConfigError("toy dataset supports 2..10 classes, got " + std::to_string(options.num_classes));
  }
  if (options.image_size < 4) throw ConfigError("toy dataset image_size must be at least 4");
  const std::size_t n = options.num_samples, s = options.image_size, plane = s * s;
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, options.pixel_noise);
  std::uniform_int_distribution<int> pick_class(0, static_cast<int>(options.num_classes) - 1);

  LabeledDataset data;
  data.name = "toy";
  data.images = Tensor<float>({n, 3, s, s});
  data.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int cls = pick_class(rng);
    data.labels[i] = cls;
    std::array<double, 3> fg{}, bg{};
    do {
      for (auto& c : fg) c = unit(rng);
      for (auto& c : bg) c = unit(rng);
    } while (std::abs(luminance(fg) - luminance(bg)) < 0.35);
    const double cx = 0.4 * unit(rng) - 0.2, cy = 0.4 * unit(rng) - 0.2;
    const double scale = 0.55 + 0.3 * unit(rng);
    const double freq = 2.5 + unit(rng);
    const double phase = 2.0 * std::numbers::pi * unit(rng);
    for (std::size_t y = 0; y < s; ++y)
      for (std::size_t x = 0; x < s; ++x) {
        const double u = (2.0 * (static_cast<double>(x) + 0.5) / static_cast<double>(s)) - 1.0;
        const double v = (2.0 * (static_cast<double>(y) + 0.5) / static_cast<double>(s)) - 1.0;
        const bool on = pattern_mask(cls, u, v, cx, cy, scale, freq, phase);
        for (std::size_t c = 0; c < 3; ++c) {
          const double value = (on ? fg[c] : bg[c]) + noise(rng);
          data.images[(i * 3 + c) * plane + y * s + x] = static_cast<float>(std::clamp(value, 0.0, 1.0));
        }
      }
  }
  return data;
}

Tensor<float> nhwc_u8_to_nchw(const std::vector<std::uint8_t>& pixels, std::size_t n, std::size_t h, std::size_t w,
                              std::size_t c) {
  if (pixels.size() != n * h * w * c) throw DataError("pixel buffer size does not match NHWC shape");
  Tensor<float> out({n, c, h, w});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t ch = 0; ch < c; ++ch)
          out[((i * c + ch) * h + y) * w + x] = static_cast<float>(pixels[((i * h + y) * w + x) * c + ch]) / 255.0f;
  return out;
}

}  // namespace ctta
