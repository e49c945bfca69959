// Copyright 2026 The slimnet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SLIMNET_DATA_HPP_
#define SLIMNET_DATA_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "slimnet/tensor.hpp"

namespace slimnet {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Per-channel normalization statistics.
struct NormStats {
  std::vector<float> mean;
  std::vector<float> std;
};

struct Dataset {
  Tensor<float> images;  // [N,C,H,W], normalized
  std::vector<int> labels;
  int classes = 0;
  std::string split;
  NormStats stats;

  Index size() const { return static_cast<Index>(labels.size()); }
  Index channels() const { return images.dim(1); }
  Index resolution() const { return images.dim(2); }
  /// Samples [begin, begin + count) as a batch tensor.
  Tensor<float> slice(Index begin, Index count) const;
};

NormStats compute_norm_stats(const Tensor<float>& images);
/// Normalizes in place and records the statistics on the dataset.
void normalize(Dataset& ds, const NormStats& stats);

/**
 * Loads an IDX image/label pair (MNIST layout: unsigned-byte images with
 * magic 0x00000803 and three big-endian dims, labels with magic 0x00000801).
 * Pixels are scaled to [0,1], then normalized with `stats` if given, else
 * with the file's own statistics.
 */
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 const std::optional<NormStats>& stats = std::nullopt, std::string split = "train");

/// Writes unsigned-byte IDX files; the inverse of load_idx before scaling.
void write_idx_images(const std::filesystem::path& path, const std::vector<std::uint8_t>& pixels, std::uint32_t n,
                      std::uint32_t rows, std::uint32_t cols);
void write_idx_labels(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels);

struct SynthOptions {
  int channels = 3;
  int blobs_per_class = 3;
  double noise = 0.6;        // per-pixel Gaussian noise
  double jitter = 2.0;       // blob centre jitter, pixels
  double distractor = 0.6;   // amplitude of a blob borrowed from another class
};

/**
 * Class-conditional Gaussian-blob images. Class prototypes depend only on
 * `seed`; samples depend on (seed, split), so train and test splits share
 * prototypes but not samples. Labels are balanced within one sample.
 */
Dataset synth_dataset(std::uint64_t seed, Index n, int classes, int resolution, const std::string& split = "train",
                      const SynthOptions& options = {}, const std::optional<NormStats>& stats = std::nullopt);

struct Augment {
  bool flip = false;
  int crop_pad = 0;  // random crop after zero padding by this many pixels; 0 disables
};

struct Batch {
  Tensor<float> x;
  std::vector<int> y;
};

/**
 * Mini-batches over a dataset. Each epoch visits every sample exactly once,
 * in an order fixed by (seed, epoch). The final batch may be short.
 */
class BatchIterator {
 public:
  BatchIterator(const Dataset& ds, Index batch_size, std::uint64_t seed, bool shuffle = true, Augment augment = {});

  void start_epoch(std::uint64_t epoch);
  bool next(Batch& batch);
  std::uint64_t epoch() const { return epoch_; }
  Index batches_per_epoch() const { return (ds_.size() + batch_size_ - 1) / batch_size_; }
  const std::vector<Index>& order() const { return order_; }

 private:
  const Dataset& ds_;
  Index batch_size_;
  std::uint64_t seed_;
  bool shuffle_;
  Augment augment_;
  std::uint64_t epoch_ = 0;
  std::vector<Index> order_;
  Index cursor_ = 0;
  std::uint64_t aug_state_ = 0;
};

/// splitmix64 step, used to derive independent streams from one seed.
std::uint64_t mix_seed(std::uint64_t x);

}  // namespace slimnet

#endif  // SLIMNET_DATA_HPP_
