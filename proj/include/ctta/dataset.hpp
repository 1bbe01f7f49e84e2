#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctta/tensor.hpp"

namespace ctta {

/// Images in NCHW layout with pixels in [0, 1], plus integer labels.
struct LabeledDataset {
  std::string name;
  Tensor<float> images;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t num_classes_hint() const;
};

/// Rows [begin, end) of a dataset.
LabeledDataset subset(const LabeledDataset& data, std::size_t begin, std::size_t end);

/// Throws DataError unless every label is in [0, num_classes) and sizes agree.
void validate_labels(const LabeledDataset& data, std::size_t num_classes);

struct ToyDatasetOptions {
  std::size_t num_samples = 5000;
  std::size_t image_size = 16;
  std::size_t num_classes = 10;
  double pixel_noise = 0.03;
  std::uint64_t seed = 0;
};

/// Procedural pattern-recognition task: each class is a geometric pattern (stripes of four orientations,
/// disc, ring, square, plus, X, checkerboard) drawn in a random foreground colour over a random background
/// with positional jitter. Supports up to 10 classes.
LabeledDataset make_toy_dataset(const ToyDatasetOptions& options);

/// NHWC uint8 -> NCHW float in [0, 1].
Tensor<float> nhwc_u8_to_nchw(const std::vector<std::uint8_t>& pixels, std::size_t n, std::size_t h, std::size_t w,
                              std::size_t c);

}  // namespace ctta
