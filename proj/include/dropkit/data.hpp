#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dropkit/errors.hpp"
#include "dropkit/rng.hpp"
#include "dropkit/tensor.hpp"

namespace dropkit {

// Images are (N, 3, 32, 32) with raw byte values 0..255 stored as doubles
// until normalize() maps them to (x - channel_mean) / 128.
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  std::size_t num_classes = 0;
  std::array<double, 3> channel_means = {0.0, 0.0, 0.0};
  bool normalized = false;

  std::size_t size() const { return images.shape().n; }
};

enum class CifarFormat { cifar10, cifar100 };

inline constexpr std::size_t kCifarImageBytes = 3 * 32 * 32;

inline std::size_t cifar_record_bytes(CifarFormat fmt) {
  return fmt == CifarFormat::cifar10 ? 1 + kCifarImageBytes : 2 + kCifarImageBytes;
}

// One CIFAR binary file: per record a label byte (CIFAR-100: coarse then fine,
// the fine byte is used) followed by 3072 pixel bytes in R,G,B plane order,
// each plane row-major.
inline Dataset read_cifar_binary(const std::string& path, CifarFormat fmt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open dataset file: " + path);
  const auto file_size = std::filesystem::file_size(path);
  const std::size_t record = cifar_record_bytes(fmt);
  if (file_size == 0 || file_size % record != 0)
    throw FormatError("truncated CIFAR record in " + path);
  const std::size_t n = file_size / record;
  Dataset ds;
  ds.num_classes = fmt == CifarFormat::cifar10 ? 10 : 100;
  ds.images = Tensor(Shape4{n, 3, 32, 32});
  ds.labels.resize(n);
  std::vector<unsigned char> buf(record);
  for (std::size_t i = 0; i < n; ++i) {
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(record));
    if (!in) throw FormatError("truncated CIFAR record in " + path);
    const std::size_t label_off = fmt == CifarFormat::cifar10 ? 0 : 1;  // fine label byte
    const int label = buf[label_off];
    if (label < 0 || static_cast<std::size_t>(label) >= ds.num_classes)
      throw DataError("label out of range in " + path);
    ds.labels[i] = label;
    const unsigned char* px = buf.data() + label_off + 1;
    double* dst = ds.images.data() + i * kCifarImageBytes;
    for (std::size_t j = 0; j < kCifarImageBytes; ++j) dst[j] = static_cast<double>(px[j]);
  }
  return ds;
}

// Inverse of read_cifar_binary for one record; only valid on raw datasets.
inline std::vector<unsigned char> serialize_cifar_record(const Dataset& ds, std::size_t index,
                                                         CifarFormat fmt,
                                                         unsigned char coarse_label = 0) {
  if (ds.normalized) throw DataError("cannot serialize a normalized dataset");
  std::vector<unsigned char> out;
  out.reserve(cifar_record_bytes(fmt));
  if (fmt == CifarFormat::cifar100) out.push_back(coarse_label);
  out.push_back(static_cast<unsigned char>(ds.labels[index]));
  const double* src = ds.images.data() + index * kCifarImageBytes;
  for (std::size_t j = 0; j < kCifarImageBytes; ++j)
    out.push_back(static_cast<unsigned char>(src[j]));
  return out;
}

struct DataPair {
  Dataset train, test;
};

inline Dataset concat_datasets(const std::vector<Dataset>& parts) {
  std::size_t n = 0;
  for (const Dataset& d : parts) n += d.size();
  Dataset out;
  out.num_classes = parts.front().num_classes;
  out.images = Tensor(Shape4{n, 3, 32, 32});
  out.labels.reserve(n);
  std::size_t at = 0;
  for (const Dataset& d : parts) {
    std::copy(d.images.data(), d.images.data() + d.images.size(),
              out.images.data() + at * kCifarImageBytes);
    out.labels.insert(out.labels.end(), d.labels.begin(), d.labels.end());
    at += d.size();
  }
  return out;
}

inline DataPair load_cifar10(const std::string& dir) {
  std::vector<Dataset> parts;
  for (int i = 1; i <= 5; ++i)
    parts.push_back(read_cifar_binary(dir + "/data_batch_" + std::to_string(i) + ".bin",
                                      CifarFormat::cifar10));
  DataPair pair;
  pair.train = concat_datasets(parts);
  pair.test = read_cifar_binary(dir + "/test_batch.bin", CifarFormat::cifar10);
  return pair;
}

inline DataPair load_cifar100(const std::string& dir) {
  DataPair pair;
  pair.train = read_cifar_binary(dir + "/train.bin", CifarFormat::cifar100);
  pair.test = read_cifar_binary(dir + "/test.bin", CifarFormat::cifar100);
  return pair;
}

inline std::array<double, 3> compute_channel_means(const Dataset& train) {
  if (train.size() == 0) throw DataError("cannot compute channel means of an empty dataset");
  std::array<double, 3> means = {0.0, 0.0, 0.0};
  const Shape4& s = train.images.shape();
  const std::size_t per_channel = s.n * s.h * s.w;
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t h = 0; h < s.h; ++h)
        for (std::size_t w = 0; w < s.w; ++w) means[c] += train.images(n, c, h, w);
  for (double& m : means) m /= static_cast<double>(per_channel);
  return means;
}

// x <- (x - mean_c) / 128, channel means taken from the training split.
inline void normalize(Dataset& ds, const std::array<double, 3>& channel_means) {
  const Shape4& s = ds.images.shape();
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t h = 0; h < s.h; ++h)
        for (std::size_t w = 0; w < s.w; ++w)
          ds.images(n, c, h, w) = (ds.images(n, c, h, w) - channel_means[c]) / 128.0;
  ds.channel_means = channel_means;
  ds.normalized = true;
}

struct AugmentPolicy {
  std::size_t pad = 4;
  std::size_t crop_h = 32, crop_w = 32;
  double hflip_prob = 0.5;
  bool enabled = true;
};

// Zero-pad, crop at the forced offset, then optionally mirror horizontally.
inline Tensor augment_with(const Tensor& img, const AugmentPolicy& policy, std::size_t off_y,
                           std::size_t off_x, bool flip) {
  const Shape4& s = img.shape();
  if (policy.crop_h > s.h + 2 * policy.pad || policy.crop_w > s.w + 2 * policy.pad)
    throw ParameterError("crop window larger than padded image");
  Tensor out(Shape4{s.n, s.c, policy.crop_h, policy.crop_w});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < policy.crop_h; ++y)
        for (std::size_t x = 0; x < policy.crop_w; ++x) {
          const long long src_y = static_cast<long long>(y + off_y) -
                                  static_cast<long long>(policy.pad);
          const std::size_t out_x = flip ? policy.crop_w - 1 - x : x;
          const long long src_x = static_cast<long long>(x + off_x) -
                                  static_cast<long long>(policy.pad);
          double v = 0.0;
          if (src_y >= 0 && src_y < static_cast<long long>(s.h) && src_x >= 0 &&
              src_x < static_cast<long long>(s.w))
            v = img(n, c, static_cast<std::size_t>(src_y), static_cast<std::size_t>(src_x));
          out(n, c, y, out_x) = v;
        }
  return out;
}

// Draw order is fixed (offset y, offset x, flip) so a (seed, epoch, index)
// keyed stream reproduces the same crop regardless of scheduling.
inline Tensor augment(const Tensor& img, const AugmentPolicy& policy, Rng& rng) {
  const std::size_t span = 2 * policy.pad + 1;
  const std::size_t off_y = static_cast<std::size_t>(rng.next_below(span));
  const std::size_t off_x = static_cast<std::size_t>(rng.next_below(span));
  const bool flip = rng.next_double() < policy.hflip_prob;
  return augment_with(img, policy, off_y, off_x, flip);
}

// First `count` entries of a seeded permutation of 0..num_classes-1.
inline std::vector<std::size_t> select_classes(std::size_t num_classes, std::size_t count,
                                               Rng& rng) {
  if (count == 0 || count > num_classes) throw DataError("subset class count out of range");
  std::vector<std::size_t> order(num_classes);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.next_below(i)]);
  order.resize(count);
  return order;
}

// Take per_class examples (0 = all, in file order) of each listed class,
// remapping labels to the position in class_list.
inline Dataset stratified_take(const Dataset& ds, const std::vector<std::size_t>& class_list,
                               std::size_t per_class, Rng& rng) {
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i)
    by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);

  std::vector<std::size_t> chosen;
  std::vector<int> chosen_labels;
  for (std::size_t k = 0; k < class_list.size(); ++k) {
    std::vector<std::size_t>& pool = by_class.at(class_list[k]);
    const std::size_t take = per_class == 0 ? pool.size() : per_class;
    if (pool.size() < take)
      throw DataError("class " + std::to_string(class_list[k]) + " has only " +
                      std::to_string(pool.size()) + " examples; " + std::to_string(take) +
                      " requested");
    if (per_class != 0)
      for (std::size_t i = pool.size(); i > 1; --i)
        std::swap(pool[i - 1], pool[rng.next_below(i)]);
    for (std::size_t j = 0; j < take; ++j) {
      chosen.push_back(pool[j]);
      chosen_labels.push_back(static_cast<int>(k));
    }
  }

  Dataset out;
  out.num_classes = class_list.size();
  out.channel_means = ds.channel_means;
  out.normalized = ds.normalized;
  out.images = Tensor(Shape4{chosen.size(), 3, ds.images.shape().h, ds.images.shape().w});
  out.labels = std::move(chosen_labels);
  const std::size_t image_len = ds.images.shape().c * ds.images.shape().h * ds.images.shape().w;
  for (std::size_t at = 0; at < chosen.size(); ++at)
    std::copy(ds.images.data() + chosen[at] * image_len,
              ds.images.data() + (chosen[at] + 1) * image_len, out.images.data() + at * image_len);
  return out;
}

// Deterministic stratified subset: select `classes` classes, then `per_class`
// examples of each, remapping labels to 0..classes-1 in selection order.
inline Dataset subset_sample(const Dataset& ds, std::size_t classes, std::size_t per_class,
                             Rng& rng) {
  return stratified_take(ds, select_classes(ds.num_classes, classes, rng), per_class, rng);
}

struct SyntheticParams {
  double amplitude = 150.0;   // blob peak over the background
  double sigma = 3.5;         // blob radius in pixels
  double noise_std = 18.0;    // additive pixel noise
  double jitter = 1.5;        // uniform blob-center jitter
  double background = 25.0;
};

// Class-dependent Gaussian blobs on a ring plus pixel noise; raw 0..255 scale.
// Defaults are separable enough for a small net to clear 90% accuracy within
// five epochs; harder settings produce an overfit-prone benchmark instead.
inline Dataset synthetic_dataset(std::size_t classes, std::size_t per_class, std::uint64_t seed,
                                 const SyntheticParams& params = {}) {
  if (classes < 2) throw ParameterError("synthetic dataset needs >= 2 classes");
  Dataset ds;
  ds.num_classes = classes;
  const std::size_t n = classes * per_class;
  ds.images = Tensor(Shape4{n, 3, 32, 32});
  ds.labels.resize(n);
  Rng root = Rng(seed).split("synthetic");
  std::size_t at = 0;
  for (std::size_t k = 0; k < classes; ++k) {
    const double angle = 2.0 * 3.14159265358979323846 * static_cast<double>(k) /
                         static_cast<double>(classes);
    const double base_cy = 16.0 + 9.0 * std::sin(angle);
    const double base_cx = 16.0 + 9.0 * std::cos(angle);
    for (std::size_t i = 0; i < per_class; ++i, ++at) {
      Rng rng = root.split(at);
      const double cy = base_cy + rng.uniform(-params.jitter, params.jitter);
      const double cx = base_cx + rng.uniform(-params.jitter, params.jitter);
      ds.labels[at] = static_cast<int>(k);
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < 32; ++y)
          for (std::size_t x = 0; x < 32; ++x) {
            const double dy = static_cast<double>(y) - cy;
            const double dx = static_cast<double>(x) - cx;
            const double blob =
                params.amplitude *
                std::exp(-(dy * dy + dx * dx) / (2.0 * params.sigma * params.sigma));
            const double v = params.background + blob + params.noise_std * rng.normal();
            ds.images(at, c, y, x) = std::clamp(v, 0.0, 255.0);
          }
    }
  }
  return ds;
}

}  // namespace dropkit
