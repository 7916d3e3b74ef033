#pragma once

#include "daash/labeled_batch.hpp"
#include "daash/model.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace daash {

enum class DatasetKind { Synthetic, Cifar10Binary };

struct DatasetSource {
  DatasetKind kind = DatasetKind::Synthetic;
  std::filesystem::path path;       // cifar: training records
  std::filesystem::path test_path;  // cifar: test records; empty splits `path`
  int classes = 4;
  Index channels = 3;
  Index height = 32;
  Index width = 32;
  Index train_size = 2000;
  Index test_size = 512;
  std::uint64_t seed = 0;
};

struct Dataset {
  LabeledBatch train;
  LabeledBatch test;
};

Dataset load(const DatasetSource& source);

/// Balanced K-class images: oriented sinusoidal gratings whose orientation
/// encodes the class, with random phase, contrast, tint and pixel noise.
LabeledBatch make_synthetic(Index count, int classes, Index channels, Index height, Index width, std::uint64_t seed);

/// CIFAR-10 binary records: 1 label byte + 3072 pixel bytes (R, G, B planes,
/// row-major within each plane).
inline constexpr std::size_t kCifarRecordBytes = 3073;
LabeledBatch parse_cifar10(const std::string& bytes, int classes = 10);
LabeledBatch read_cifar10(const std::filesystem::path& path, int classes = 10);
std::string encode_cifar10(const LabeledBatch& batch);
void write_cifar10(const std::filesystem::path& path, const LabeledBatch& batch);

/// Keeps the samples the model classifies correctly.
LabeledBatch filter_correct(const TrainedModel& model, const LabeledBatch& batch);

}  // namespace daash
