#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "prunekit/rng.hpp"
#include "prunekit/tensor.hpp"

namespace prunekit {

// Labeled images, stored as 32-bit reals to keep large datasets affordable;
// batches are materialized as 64-bit tensors.
struct Dataset {
  int channels = 0, height = 0, width = 0;
  int num_classes = 0;
  std::vector<float> images;  // N*C*H*W row-major
  std::vector<int> labels;

  int64_t size() const { return static_cast<int64_t>(labels.size()); }
  int64_t image_elems() const {
    return static_cast<int64_t>(channels) * height * width;
  }
};

struct NormalizeConfig {
  std::vector<double> mean;  // per channel
  std::vector<double> stddev;
};

NormalizeConfig cifar10_normalization();

// CIFAR-10 binary files: 3073-byte records, 1 label byte + 3072 pixel bytes
// (R, G, B planes, 32x32 row-major). Pixels are scaled to [0,1] and then
// normalized per channel.
Dataset load_cifar_binary(const std::vector<std::string>& paths, const NormalizeConfig& norm);

// Gaussian class prototypes plus per-image noise; separable at low noise.
// `sample_salt` varies the noise draws while keeping the prototypes, giving
// disjoint train/test sets over the same classes.
Dataset synth_blobs(int classes, int per_class, int channels, int height, int width, uint64_t seed,
                    double noise = 0.1, uint64_t sample_salt = 0);

// Moves exactly `per_class_holdout` seeded-random images of every class into
// the second dataset; the two results partition the input.
std::pair<Dataset, Dataset> split_holdout(const Dataset& dataset, int per_class_holdout,
                                          uint64_t seed);

enum class Augment { None, Flip, Pad4Crop, FlipPad4Crop };
Augment parse_augment(const std::string& name);

struct Batch {
  Tensor images;  // [B,C,H,W]
  std::vector<int> labels;
};

// Seeded epoch stream over a dataset; the final short batch is emitted.
class BatchStream {
 public:
  BatchStream(const Dataset& dataset, int batch_size, Augment augment, uint64_t seed,
              bool shuffle = true);

  void start_epoch(int epoch);
  std::optional<Batch> next();
  int64_t batches_per_epoch() const;

 private:
  const Dataset* ds_;
  int batch_size_;
  Augment augment_;
  uint64_t seed_;
  bool shuffle_;
  Rng rng_;
  std::vector<int64_t> order_;
  size_t cursor_ = 0;
};

// Augmentation primitives (in-place on one C*H*W image).
void flip_horizontal(double* image, int channels, int height, int width);
void pad4_crop(double* image, int channels, int height, int width, int offset_y, int offset_x);

}  // namespace prunekit
