#include "daash/tensor.hpp"

#include "daash/error.hpp"

#include <algorithm>
#include <sstream>

namespace daash {

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + to_string(shape));
    n *= d;
  }
  return n;
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(Eigen::ArrayXd::Constant(numel(shape_), fill)) {}

Tensor::Tensor(Shape shape, Eigen::ArrayXd data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (numel(shape_) != data_.size()) {
    throw ShapeError("shape " + to_string(shape_) + " does not match " + std::to_string(data_.size()) +
                     " elements");
  }
}

Tensor::Tensor(Shape shape, std::initializer_list<double> values)
    : Tensor(std::move(shape), Eigen::Map<const Eigen::ArrayXd>(values.begin(), static_cast<Index>(values.size()))) {}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

Index Tensor::row_size() const {
  if (shape_.empty()) throw ShapeError("row access on a scalar tensor");
  return shape_[0] == 0 ? numel(Shape(shape_.begin() + 1, shape_.end())) : data_.size() / shape_[0];
}

Tensor Tensor::slice(Index begin, Index end) const {
  const Index rows = dim(0);
  if (begin < 0 || end > rows || begin > end) {
    throw ShapeError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " +
                     to_string(shape_));
  }
  const Index rs = row_size();
  Shape s = shape_;
  s[0] = end - begin;
  return Tensor(std::move(s), data_.segment(begin * rs, (end - begin) * rs));
}

Tensor Tensor::gather(std::span<const Index> rows) const {
  const Index rs = row_size();
  Shape s = shape_;
  s[0] = static_cast<Index>(rows.size());
  Tensor out(std::move(s));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= dim(0)) throw ShapeError("gather row out of range");
    out.array().segment(static_cast<Index>(i) * rs, rs) = data_.segment(rows[i] * rs, rs);
  }
  return out;
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  Shape s = parts[0].shape();
  Index rows = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != static_cast<Index>(s.size()) || !std::equal(s.begin() + 1, s.end(), p.shape().begin() + 1)) {
      throw ShapeError("concat_rows: " + to_string(p.shape()) + " vs " + to_string(s));
    }
    rows += p.dim(0);
  }
  s[0] = rows;
  Tensor out(std::move(s));
  Index off = 0;
  for (const Tensor& p : parts) {
    out.array().segment(off, p.size()) = p.array();
    off += p.size();
  }
  return out;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

void require_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) throw NumericError(std::string(what) + ": non-finite value");
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  if (a.size() == 0) return 0.0;
  return (a.array() - b.array()).abs().maxCoeff();
}

}  // namespace daash
