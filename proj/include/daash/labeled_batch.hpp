#pragma once

#include "daash/tensor.hpp"

#include <span>
#include <vector>

namespace daash {

/// Images in [0, 1] (N, C, H, W) with one class index per image.
struct LabeledBatch {
  Tensor images;
  std::vector<int> labels;

  Index size() const { return static_cast<Index>(labels.size()); }
  LabeledBatch subset(std::span<const Index> rows) const;
  LabeledBatch slice(Index begin, Index end) const;
  /// Throws if pixels leave [0, 1], labels leave [0, classes), or counts differ.
  void validate(int classes) const;
};

/// (N, classes) one-hot rows.
Tensor one_hot(std::span<const int> labels, int classes);

}  // namespace daash
