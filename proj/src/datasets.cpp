#include "daash/datasets.hpp"

#include "daash/error.hpp"
#include "daash/io.hpp"
#include "daash/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace daash {

LabeledBatch make_synthetic(Index count, int classes, Index channels, Index height, Index width, std::uint64_t seed) {
  if (count < 0 || classes < 2 || channels < 1 || height < 1 || width < 1) {
    throw ConfigError("synthetic dataset: invalid sizes");
  }
  // Class grating plus two class-independent low-frequency distractors.
  constexpr double kAmpLo = 0.1, kAmpHi = 0.2;
  constexpr double kDistractLo = 0.05, kDistractHi = 0.12;
  constexpr double kNoise = 0.03;
  constexpr double kCycles = 3.0;
  constexpr int kDistractors = 2;
  Rng rng(seed);
  LabeledBatch out;
  out.images = Tensor(Shape{count, channels, height, width});
  out.labels.resize(static_cast<std::size_t>(count));
  const Index plane = height * width;
  const double two_pi = 2.0 * std::numbers::pi;
  for (Index n = 0; n < count; ++n) {
    const int label = static_cast<int>(n % classes);
    out.labels[static_cast<std::size_t>(n)] = label;
    struct Wave {
      double kx, ky, phase, amp;
    };
    std::vector<Wave> waves;
    const double theta = std::numbers::pi * label / classes;
    waves.push_back({two_pi * kCycles * std::cos(theta) / static_cast<double>(width),
                     two_pi * kCycles * std::sin(theta) / static_cast<double>(height), rng.uniform(0.0, two_pi),
                     rng.uniform(kAmpLo, kAmpHi)});
    for (int d = 0; d < kDistractors; ++d) {
      const double t = rng.uniform(0.0, std::numbers::pi);
      const double cycles = rng.uniform(1.0, 2.0);
      waves.push_back({two_pi * cycles * std::cos(t) / static_cast<double>(width),
                       two_pi * cycles * std::sin(t) / static_cast<double>(height), rng.uniform(0.0, two_pi),
                       rng.uniform(kDistractLo, kDistractHi)});
    }
    const double base = rng.uniform(0.35, 0.65);
    for (Index c = 0; c < channels; ++c) {
      const double tint = rng.uniform(0.6, 1.0);
      double* px = out.images.data() + (n * channels + c) * plane;
      for (Index y = 0; y < height; ++y)
        for (Index x = 0; x < width; ++x) {
          double v = base;
          for (const auto& w : waves) v += w.amp * tint * std::sin(w.kx * x + w.ky * y + w.phase);
          v += kNoise * rng.normal();
          px[y * width + x] = std::clamp(v, 0.0, 1.0);
        }
    }
  }
  return out;
}

LabeledBatch parse_cifar10(const std::string& bytes, int classes) {
  if (bytes.empty()) throw IoError("CIFAR file is empty");
  if (bytes.size() % kCifarRecordBytes != 0) {
    throw IoError("CIFAR data truncated: last record starts at byte offset " +
                  std::to_string(bytes.size() / kCifarRecordBytes * kCifarRecordBytes) + " of " +
                  std::to_string(bytes.size()));
  }
  const Index n = static_cast<Index>(bytes.size() / kCifarRecordBytes);
  LabeledBatch out;
  out.images = Tensor(Shape{n, 3, 32, 32});
  out.labels.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const std::size_t off = static_cast<std::size_t>(i) * kCifarRecordBytes;
    const int label = static_cast<unsigned char>(bytes[off]);
    if (label >= classes) {
      throw IoError("CIFAR label " + std::to_string(label) + " at byte offset " + std::to_string(off) +
                    " exceeds class count " + std::to_string(classes));
    }
    out.labels[static_cast<std::size_t>(i)] = label;
    for (Index k = 0; k < 3072; ++k) {
      out.images[i * 3072 + k] = static_cast<unsigned char>(bytes[off + 1 + static_cast<std::size_t>(k)]) / 255.0;
    }
  }
  return out;
}

LabeledBatch read_cifar10(const std::filesystem::path& path, int classes) {
  if (!std::filesystem::exists(path)) throw IoError("dataset file not found: " + path.string());
  return parse_cifar10(read_file(path), classes);
}

std::string encode_cifar10(const LabeledBatch& batch) {
  if (batch.images.rank() != 4 || batch.images.dim(1) != 3 || batch.images.dim(2) != 32 || batch.images.dim(3) != 32) {
    throw ShapeError("CIFAR records hold (3, 32, 32) images, got " + to_string(batch.images.shape()));
  }
  batch.validate(256);
  std::string out;
  out.reserve(static_cast<std::size_t>(batch.size()) * kCifarRecordBytes);
  for (Index i = 0; i < batch.size(); ++i) {
    out.push_back(static_cast<char>(batch.labels[static_cast<std::size_t>(i)]));
    for (Index k = 0; k < 3072; ++k) {
      out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(batch.images[i * 3072 + k] * 255.0))));
    }
  }
  return out;
}

void write_cifar10(const std::filesystem::path& path, const LabeledBatch& batch) {
  write_file_atomic(path, encode_cifar10(batch));
}

Dataset load(const DatasetSource& src) {
  Dataset d;
  if (src.kind == DatasetKind::Synthetic) {
    d.train = make_synthetic(src.train_size, src.classes, src.channels, src.height, src.width, mix_seed(src.seed, "train"));
    d.test = make_synthetic(src.test_size, src.classes, src.channels, src.height, src.width, mix_seed(src.seed, "test"));
    return d;
  }
  LabeledBatch all = read_cifar10(src.path, src.classes);
  if (!src.test_path.empty()) {
    d.train = all;
    d.test = read_cifar10(src.test_path, src.classes);
  } else {
    const Index ntrain = std::min(src.train_size, all.size());
    const Index ntest = src.test_size > 0 ? std::min(src.test_size, all.size() - ntrain) : all.size() - ntrain;
    d.train = all.slice(0, ntrain);
    d.test = all.slice(ntrain, ntrain + ntest);
  }
  if (src.train_size > 0 && d.train.size() > src.train_size) d.train = d.train.slice(0, src.train_size);
  if (src.test_size > 0 && d.test.size() > src.test_size) d.test = d.test.slice(0, src.test_size);
  return d;
}

LabeledBatch filter_correct(const TrainedModel& model, const LabeledBatch& batch) {
  if (batch.size() == 0) return batch;
  const auto pred = predict_labels(model, batch.images);
  std::vector<Index> keep;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == batch.labels[i]) keep.push_back(static_cast<Index>(i));
  return batch.subset(keep);
}

}  // namespace daash
