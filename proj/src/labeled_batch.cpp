#include "daash/labeled_batch.hpp"

#include "daash/error.hpp"

namespace daash {

LabeledBatch LabeledBatch::subset(std::span<const Index> rows) const {
  LabeledBatch out;
  out.images = images.gather(rows);
  out.labels.reserve(rows.size());
  for (Index r : rows) out.labels.push_back(labels.at(static_cast<std::size_t>(r)));
  return out;
}

LabeledBatch LabeledBatch::slice(Index begin, Index end) const {
  LabeledBatch out;
  out.images = images.slice(begin, end);
  out.labels.assign(labels.begin() + begin, labels.begin() + end);
  return out;
}

void LabeledBatch::validate(int classes) const {
  if (images.rank() != 4) throw ShapeError("images must be (N, C, H, W), got " + to_string(images.shape()));
  if (images.dim(0) != size()) {
    throw ShapeError(std::to_string(images.dim(0)) + " images but " + std::to_string(size()) + " labels");
  }
  if (images.size() > 0 && (images.array().minCoeff() < 0.0 || images.array().maxCoeff() > 1.0)) {
    throw ConfigError("pixels outside [0, 1]");
  }
  for (int y : labels) {
    if (y < 0 || y >= classes) throw ConfigError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
  }
}

Tensor one_hot(std::span<const int> labels, int classes) {
  Tensor t(Shape{static_cast<Index>(labels.size()), classes}, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes) throw ConfigError("one_hot: label out of range");
    t[static_cast<Index>(i) * classes + labels[i]] = 1.0;
  }
  return t;
}

}  // namespace daash
