// Copyright 2026 The slimnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "slimnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>

namespace slimnet {

namespace {

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& buf, std::size_t offset, const std::string& what) {
  if (buf.size() < offset + 4) throw DataError(what + ": truncated header");
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                     static_cast<char>(v)};
  out.write(b, 4);
}

std::uint64_t hash_str(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ull;
  return h;
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

Tensor<float> Dataset::slice(Index begin, Index count) const {
  const Index per = images.numel() / images.dim(0);
  Shape s = images.shape();
  s[0] = count;
  return Tensor<float>(s, images.data().segment(begin * per, count * per).eval());
}

NormStats compute_norm_stats(const Tensor<float>& images) {
  const Index n = images.dim(0), c = images.dim(1), hw = images.dim(2) * images.dim(3);
  NormStats st;
  for (Index ch = 0; ch < c; ++ch) {
    double s = 0, s2 = 0;
    for (Index i = 0; i < n; ++i) {
      const float* p = images.ptr() + (i * c + ch) * hw;
      for (Index k = 0; k < hw; ++k) {
        s += p[k];
        s2 += double(p[k]) * p[k];
      }
    }
    const double m = s / double(n * hw);
    const double var = std::max(s2 / double(n * hw) - m * m, 0.0);
    st.mean.push_back(static_cast<float>(m));
    st.std.push_back(static_cast<float>(std::max(std::sqrt(var), 1e-6)));
  }
  return st;
}

void normalize(Dataset& ds, const NormStats& stats) {
  const Index n = ds.images.dim(0), c = ds.images.dim(1), hw = ds.images.dim(2) * ds.images.dim(3);
  if (static_cast<Index>(stats.mean.size()) != c || static_cast<Index>(stats.std.size()) != c) {
    throw DataError("normalization statistics have " + std::to_string(stats.mean.size()) + " channels, data has " +
                    std::to_string(c));
  }
  for (Index i = 0; i < n; ++i) {
    for (Index ch = 0; ch < c; ++ch) {
      auto seg = ds.images.data().segment((i * c + ch) * hw, hw);
      seg = (seg - stats.mean[static_cast<std::size_t>(ch)]) / stats.std[static_cast<std::size_t>(ch)];
    }
  }
  ds.stats = stats;
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 const std::optional<NormStats>& stats, std::string split) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);
  if (img.empty()) throw DataError(images_path.string() + ": empty file");
  if (lab.empty()) throw DataError(labels_path.string() + ": empty file");

  const std::uint32_t img_magic = read_be32(img, 0, images_path.string());
  if (img_magic != kIdxImageMagic) throw DataError(images_path.string() + ": bad IDX image magic");
  const std::uint32_t lab_magic = read_be32(lab, 0, labels_path.string());
  if (lab_magic != kIdxLabelMagic) throw DataError(labels_path.string() + ": bad IDX label magic");

  const std::uint32_t n = read_be32(img, 4, images_path.string());
  const std::uint32_t rows = read_be32(img, 8, images_path.string());
  const std::uint32_t cols = read_be32(img, 12, images_path.string());
  const std::uint32_t nl = read_be32(lab, 4, labels_path.string());
  if (n != nl) {
    throw DataError("IDX count mismatch: " + std::to_string(n) + " images vs " + std::to_string(nl) + " labels");
  }
  if (n == 0) throw DataError(images_path.string() + ": no samples");
  const std::size_t pixels = std::size_t{n} * rows * cols;
  if (img.size() < 16 + pixels) throw DataError(images_path.string() + ": truncated pixel data");
  if (lab.size() < 8 + std::size_t{n}) throw DataError(labels_path.string() + ": truncated label data");

  Dataset ds;
  ds.split = std::move(split);
  ds.images = Tensor<float>(Shape{Index(n), 1, Index(rows), Index(cols)});
  for (std::size_t i = 0; i < pixels; ++i) ds.images.data()[Index(i)] = img[16 + i] / 255.0f;
  ds.labels.resize(n);
  int max_label = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    ds.labels[i] = lab[8 + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.classes = std::max(10, max_label + 1);
  normalize(ds, stats ? *stats : compute_norm_stats(ds.images));
  return ds;
}

void write_idx_images(const std::filesystem::path& path, const std::vector<std::uint8_t>& pixels, std::uint32_t n,
                      std::uint32_t rows, std::uint32_t cols) {
  if (pixels.size() != std::size_t{n} * rows * cols) throw DataError("write_idx_images: pixel count mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  put_be32(out, kIdxImageMagic);
  put_be32(out, n);
  put_be32(out, rows);
  put_be32(out, cols);
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

void write_idx_labels(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  put_be32(out, kIdxLabelMagic);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

Dataset synth_dataset(std::uint64_t seed, Index n, int classes, int resolution, const std::string& split,
                      const SynthOptions& opt, const std::optional<NormStats>& stats) {
  if (classes < 1 || n < classes) throw DataError("synth_dataset needs n >= classes >= 1");
  if (resolution < 4) throw DataError("synth_dataset resolution too small");

  struct Blob {
    double cy, cx, sigma;
    std::vector<double> color;
  };
  std::mt19937_64 proto_rng(mix_seed(seed));
  std::uniform_real_distribution<double> pos(0.2 * resolution, 0.8 * resolution);
  std::uniform_real_distribution<double> sig(0.06 * resolution, 0.14 * resolution);
  std::normal_distribution<double> col(0.0, 1.0);
  std::vector<std::vector<Blob>> protos(static_cast<std::size_t>(classes));
  for (auto& p : protos) {
    for (int b = 0; b < opt.blobs_per_class; ++b) {
      Blob blob{pos(proto_rng), pos(proto_rng), sig(proto_rng), {}};
      for (int c = 0; c < opt.channels; ++c) blob.color.push_back(col(proto_rng));
      p.push_back(std::move(blob));
    }
  }

  std::mt19937_64 rng(mix_seed(seed ^ hash_str(split)));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> amp(0.7, 1.3);
  std::uniform_int_distribution<int> pick_class(0, classes - 1);
  std::uniform_int_distribution<int> pick_blob(0, opt.blobs_per_class - 1);

  Dataset ds;
  ds.split = split;
  ds.classes = classes;
  ds.labels.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) ds.labels[static_cast<std::size_t>(i)] = static_cast<int>(i % classes);
  for (Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Index>(rng() % static_cast<std::uint64_t>(i + 1));
    std::swap(ds.labels[static_cast<std::size_t>(i)], ds.labels[static_cast<std::size_t>(j)]);
  }

  const Index hw = Index(resolution) * resolution;
  ds.images = Tensor<float>(Shape{n, opt.channels, resolution, resolution});
  std::vector<double> img(static_cast<std::size_t>(opt.channels * hw));
  for (Index i = 0; i < n; ++i) {
    std::fill(img.begin(), img.end(), 0.0);
    auto paint = [&](const Blob& b, double scale) {
      const double cy = b.cy + opt.jitter * gauss(rng), cx = b.cx + opt.jitter * gauss(rng);
      const double a = scale * amp(rng);
      const double inv = 1.0 / (2.0 * b.sigma * b.sigma);
      for (int y = 0; y < resolution; ++y) {
        for (int x = 0; x < resolution; ++x) {
          const double g = a * std::exp(-((y - cy) * (y - cy) + (x - cx) * (x - cx)) * inv);
          for (int c = 0; c < opt.channels; ++c) img[static_cast<std::size_t>(c * hw + y * resolution + x)] += g * b.color[static_cast<std::size_t>(c)];
        }
      }
    };
    for (const Blob& b : protos[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)])]) paint(b, 1.0);
    if (opt.distractor > 0) paint(protos[static_cast<std::size_t>(pick_class(rng))][static_cast<std::size_t>(pick_blob(rng))], opt.distractor);
    float* dst = ds.images.ptr() + i * opt.channels * hw;
    for (std::size_t k = 0; k < img.size(); ++k) dst[k] = static_cast<float>(img[k] + opt.noise * gauss(rng));
  }
  normalize(ds, stats ? *stats : compute_norm_stats(ds.images));
  return ds;
}

BatchIterator::BatchIterator(const Dataset& ds, Index batch_size, std::uint64_t seed, bool shuffle, Augment augment)
    : ds_(ds), batch_size_(batch_size), seed_(seed), shuffle_(shuffle), augment_(augment) {
  if (batch_size_ < 1) throw DataError("batch size must be positive");
  if (ds_.size() == 0) throw DataError("empty dataset");
  start_epoch(0);
}

void BatchIterator::start_epoch(std::uint64_t epoch) {
  epoch_ = epoch;
  cursor_ = 0;
  order_.resize(static_cast<std::size_t>(ds_.size()));
  std::iota(order_.begin(), order_.end(), Index{0});
  std::uint64_t state = mix_seed(seed_ ^ mix_seed(epoch + 1));
  if (shuffle_) {
    for (std::size_t i = order_.size() - 1; i > 0; --i) {
      state = mix_seed(state);
      std::swap(order_[i], order_[state % (i + 1)]);
    }
  }
  aug_state_ = mix_seed(state ^ 0xa5a5a5a5ull);
}

bool BatchIterator::next(Batch& batch) {
  if (cursor_ >= ds_.size()) return false;
  const Index count = std::min(batch_size_, ds_.size() - cursor_);
  const Index c = ds_.channels(), h = ds_.images.dim(2), w = ds_.images.dim(3);
  const Index per = c * h * w;
  batch.x = Tensor<float>(Shape{count, c, h, w});
  batch.y.resize(static_cast<std::size_t>(count));
  for (Index k = 0; k < count; ++k) {
    const Index src = order_[static_cast<std::size_t>(cursor_ + k)];
    batch.y[static_cast<std::size_t>(k)] = ds_.labels[static_cast<std::size_t>(src)];
    const float* in = ds_.images.ptr() + src * per;
    float* out = batch.x.ptr() + k * per;
    if (!augment_.flip && augment_.crop_pad == 0) {
      std::copy_n(in, per, out);
      continue;
    }
    aug_state_ = mix_seed(aug_state_);
    const bool flip = augment_.flip && (aug_state_ & 1u);
    const int span = 2 * augment_.crop_pad + 1;
    const int dy = augment_.crop_pad ? static_cast<int>((aug_state_ >> 8) % span) - augment_.crop_pad : 0;
    const int dx = augment_.crop_pad ? static_cast<int>((aug_state_ >> 24) % span) - augment_.crop_pad : 0;
    for (Index ch = 0; ch < c; ++ch) {
      for (Index y = 0; y < h; ++y) {
        for (Index x = 0; x < w; ++x) {
          const Index sy = y + dy;
          const Index sx0 = x + dx;
          const Index sx = flip ? w - 1 - sx0 : sx0;
          const bool inside = sy >= 0 && sy < h && sx0 >= 0 && sx0 < w;
          out[(ch * h + y) * w + x] = inside ? in[(ch * h + sy) * w + sx] : 0.0f;
        }
      }
    }
  }
  cursor_ += count;
  return true;
}

}  // namespace slimnet
