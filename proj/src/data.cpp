#include "prunekit/data.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

namespace prunekit {

namespace {

constexpr int64_t kCifarRecord = 3073;
constexpr int kCifarSide = 32;
constexpr int kCifarClasses = 10;

uint64_t mix_seed(uint64_t seed, uint64_t salt) {
  uint64_t x = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

}  // namespace

NormalizeConfig cifar10_normalization() {
  return NormalizeConfig{{0.4914, 0.4822, 0.4465}, {0.2470, 0.2435, 0.2616}};
}

Dataset load_cifar_binary(const std::vector<std::string>& paths, const NormalizeConfig& norm) {
  if (norm.mean.size() != 3 || norm.stddev.size() != 3)
    throw std::invalid_argument("cifar normalization needs 3 mean and 3 stddev entries");
  Dataset ds;
  ds.channels = 3;
  ds.height = kCifarSide;
  ds.width = kCifarSide;
  ds.num_classes = kCifarClasses;
  for (const std::string& path : paths) {
    std::ifstream is(path, std::ios::binary | std::ios::ate);
    if (!is) throw std::runtime_error("cannot open dataset file: " + path);
    const int64_t bytes = static_cast<int64_t>(is.tellg());
    if (bytes % kCifarRecord != 0)
      throw std::runtime_error("dataset file " + path + " is " + std::to_string(bytes) +
                               " bytes, not a multiple of the 3073-byte record");
    is.seekg(0);
    const int64_t records = bytes / kCifarRecord;
    std::vector<unsigned char> raw(static_cast<size_t>(kCifarRecord));
    ds.images.reserve(ds.images.size() + static_cast<size_t>(records * 3072));
    ds.labels.reserve(ds.labels.size() + static_cast<size_t>(records));
    for (int64_t r = 0; r < records; ++r) {
      is.read(reinterpret_cast<char*>(raw.data()), kCifarRecord);
      if (!is.good()) throw std::runtime_error("read failed for dataset file: " + path);
      const int label = raw[0];
      if (label >= kCifarClasses)
        throw std::runtime_error("dataset file " + path + " record " + std::to_string(r) +
                                 " has label " + std::to_string(label) + " >= 10");
      ds.labels.push_back(label);
      for (int c = 0; c < 3; ++c) {
        const double inv_std = 1.0 / norm.stddev[static_cast<size_t>(c)];
        const double mean = norm.mean[static_cast<size_t>(c)];
        const unsigned char* plane = raw.data() + 1 + c * 1024;
        for (int i = 0; i < 1024; ++i) {
          const double v = static_cast<double>(plane[i]) / 255.0;
          ds.images.push_back(static_cast<float>((v - mean) * inv_std));
        }
      }
    }
  }
  return ds;
}

Dataset synth_blobs(int classes, int per_class, int channels, int height, int width, uint64_t seed,
                    double noise, uint64_t sample_salt) {
  if (classes < 2 || per_class < 1 || channels < 1 || height < 1 || width < 1)
    throw std::invalid_argument("synth_blobs needs classes >= 2 and positive sizes");
  Dataset ds;
  ds.channels = channels;
  ds.height = height;
  ds.width = width;
  ds.num_classes = classes;
  const int64_t d = static_cast<int64_t>(channels) * height * width;
  Rng proto_rng(mix_seed(seed, 101));
  Rng noise_rng(mix_seed(seed, 202 + sample_salt));
  std::vector<double> prototypes(static_cast<size_t>(classes * d));
  for (double& v : prototypes) v = proto_rng.normal();
  ds.images.reserve(static_cast<size_t>(classes) * static_cast<size_t>(per_class) *
                    static_cast<size_t>(d));
  for (int k = 0; k < classes; ++k) {
    const double* proto = prototypes.data() + static_cast<int64_t>(k) * d;
    for (int i = 0; i < per_class; ++i) {
      ds.labels.push_back(k);
      for (int64_t j = 0; j < d; ++j)
        ds.images.push_back(static_cast<float>(proto[j] + noise * noise_rng.normal()));
    }
  }
  return ds;
}

std::pair<Dataset, Dataset> split_holdout(const Dataset& dataset, int per_class_holdout,
                                          uint64_t seed) {
  if (per_class_holdout < 0) throw std::invalid_argument("per-class holdout must be >= 0");
  std::vector<std::vector<int64_t>> by_class(static_cast<size_t>(dataset.num_classes));
  for (int64_t i = 0; i < dataset.size(); ++i)
    by_class[static_cast<size_t>(dataset.labels[static_cast<size_t>(i)])].push_back(i);

  std::vector<char> held(static_cast<size_t>(dataset.size()), 0);
  Rng rng(seed);
  for (int k = 0; k < dataset.num_classes; ++k) {
    auto& idx = by_class[static_cast<size_t>(k)];
    if (static_cast<int>(idx.size()) < per_class_holdout)
      throw std::runtime_error("class " + std::to_string(k) + " has only " +
                               std::to_string(idx.size()) + " images, cannot hold out " +
                               std::to_string(per_class_holdout));
    // Fisher-Yates, then take the head.
    for (size_t i = idx.size(); i > 1; --i) {
      const auto j = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(idx[i - 1], idx[j]);
    }
    for (int i = 0; i < per_class_holdout; ++i) held[static_cast<size_t>(idx[static_cast<size_t>(i)])] = 1;
  }

  Dataset train, val;
  for (Dataset* part : {&train, &val}) {
    part->channels = dataset.channels;
    part->height = dataset.height;
    part->width = dataset.width;
    part->num_classes = dataset.num_classes;
  }
  const int64_t d = dataset.image_elems();
  for (int64_t i = 0; i < dataset.size(); ++i) {
    Dataset& dst = held[static_cast<size_t>(i)] ? val : train;
    dst.labels.push_back(dataset.labels[static_cast<size_t>(i)]);
    const float* src = dataset.images.data() + i * d;
    dst.images.insert(dst.images.end(), src, src + d);
  }
  return {std::move(train), std::move(val)};
}

Augment parse_augment(const std::string& name) {
  if (name == "none") return Augment::None;
  if (name == "flip") return Augment::Flip;
  if (name == "pad4crop") return Augment::Pad4Crop;
  if (name == "flip+pad4crop") return Augment::FlipPad4Crop;
  throw std::invalid_argument("unknown augmentation '" + name +
                              "' (none, flip, pad4crop, flip+pad4crop)");
}

void flip_horizontal(double* image, int channels, int height, int width) {
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < height; ++y) {
      double* row = image + (static_cast<int64_t>(c) * height + y) * width;
      for (int x = 0; x < width / 2; ++x) std::swap(row[x], row[width - 1 - x]);
    }
}

void pad4_crop(double* image, int channels, int height, int width, int offset_y, int offset_x) {
  if (offset_y < 0 || offset_y > 8 || offset_x < 0 || offset_x > 8)
    throw std::invalid_argument("pad4_crop offsets must be in [0, 8]");
  const int64_t plane = static_cast<int64_t>(height) * width;
  std::vector<double> src(image, image + static_cast<int64_t>(channels) * plane);
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const int sy = y + offset_y - 4;  // position in the unpadded source
        const int sx = x + offset_x - 4;
        double v = 0.0;
        if (sy >= 0 && sy < height && sx >= 0 && sx < width)
          v = src[(static_cast<int64_t>(c) * height + sy) * width + sx];
        image[(static_cast<int64_t>(c) * height + y) * width + x] = v;
      }
}

BatchStream::BatchStream(const Dataset& dataset, int batch_size, Augment augment, uint64_t seed,
                         bool shuffle)
    : ds_(&dataset), batch_size_(batch_size), augment_(augment), seed_(seed), shuffle_(shuffle),
      rng_(mix_seed(seed, 0)) {
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (dataset.size() < 1) throw std::invalid_argument("cannot stream an empty dataset");
  order_.resize(static_cast<size_t>(dataset.size()));
  start_epoch(0);
}

void BatchStream::start_epoch(int epoch) {
  rng_ = Rng(mix_seed(seed_, static_cast<uint64_t>(epoch)));
  for (int64_t i = 0; i < ds_->size(); ++i) order_[static_cast<size_t>(i)] = i;
  if (shuffle_) {
    for (size_t i = order_.size(); i > 1; --i) {
      const auto j = static_cast<size_t>(rng_.uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(order_[i - 1], order_[j]);
    }
  }
  cursor_ = 0;
}

int64_t BatchStream::batches_per_epoch() const {
  return (ds_->size() + batch_size_ - 1) / batch_size_;
}

std::optional<Batch> BatchStream::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const size_t count = std::min(static_cast<size_t>(batch_size_), order_.size() - cursor_);
  const int64_t d = ds_->image_elems();
  Batch batch;
  batch.images = Tensor({static_cast<int64_t>(count), ds_->channels, ds_->height, ds_->width});
  batch.labels.reserve(count);
  double* out = batch.images.data();
  for (size_t b = 0; b < count; ++b) {
    const int64_t idx = order_[cursor_ + b];
    const float* src = ds_->images.data() + idx * d;
    double* img = out + static_cast<int64_t>(b) * d;
    for (int64_t j = 0; j < d; ++j) img[j] = static_cast<double>(src[j]);
    batch.labels.push_back(ds_->labels[static_cast<size_t>(idx)]);
    const bool do_flip = augment_ == Augment::Flip || augment_ == Augment::FlipPad4Crop;
    const bool do_crop = augment_ == Augment::Pad4Crop || augment_ == Augment::FlipPad4Crop;
    if (do_flip && rng_.bernoulli(0.5)) flip_horizontal(img, ds_->channels, ds_->height, ds_->width);
    if (do_crop) {
      const int oy = static_cast<int>(rng_.uniform_int(0, 8));
      const int ox = static_cast<int>(rng_.uniform_int(0, 8));
      pad4_crop(img, ds_->channels, ds_->height, ds_->width, oy, ox);
    }
  }
  cursor_ += count;
  return batch;
}

}  // namespace prunekit
