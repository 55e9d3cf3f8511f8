#include "uda/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace uda {

Index shape_numel(const std::vector<Index>& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d <= 0) throw std::invalid_argument("Tensor: shape dimensions must be positive");
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<Index> shape) : shape_(std::move(shape)) {
  data_ = ArrayX::Zero(shape_numel(shape_));
}

Tensor::Tensor(std::vector<Index> shape, ArrayX data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size())
    throw std::invalid_argument("Tensor: data length does not match shape");
}

Tensor Tensor::scalar(double v) {
  Tensor t({1});
  t.data_[0] = v;
  return t;
}

Tensor Tensor::from_matrix(const Matrix& m) {
  Tensor t({m.rows(), m.cols()});
  std::memcpy(t.data_.data(), m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
  return t;
}

Tensor Tensor::from_vector(const Vector& v) {
  Tensor t({v.size()});
  std::memcpy(t.data_.data(), v.data(), sizeof(double) * static_cast<std::size_t>(v.size()));
  return t;
}

Index Tensor::rows() const {
  if (rank() == 1) return 1;
  if (rank() == 2) return shape_[0];
  throw std::logic_error("Tensor: rows() requires rank 1 or 2");
}

Index Tensor::cols() const {
  if (rank() == 1) return shape_[0];
  if (rank() == 2) return shape_[1];
  throw std::logic_error("Tensor: cols() requires rank 1 or 2");
}

Eigen::Map<const Matrix> Tensor::as_matrix() const {
  return Eigen::Map<const Matrix>(data_.data(), rows(), cols());
}

Eigen::Map<Matrix> Tensor::as_matrix() {
  return Eigen::Map<Matrix>(data_.data(), rows(), cols());
}

void softmax_rows(const Tensor& in, Tensor& out, bool log_form) {
  const Index r = in.rows(), c = in.cols();
  for (Index i = 0; i < r; ++i) {
    double mx = in[i * c];
    for (Index j = 1; j < c; ++j) mx = std::max(mx, in[i * c + j]);
    double denom = 0.0;
    for (Index j = 0; j < c; ++j) denom += std::exp(in[i * c + j] - mx);
    for (Index j = 0; j < c; ++j) {
      const double e = std::exp(in[i * c + j] - mx);
      out[i * c + j] = log_form ? (in[i * c + j] - mx) - std::log(denom) : e / denom;
    }
  }
}

Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  return std::memcmp(a.array().data(), b.array().data(), sizeof(double) * static_cast<std::size_t>(a.numel())) == 0;
}

}  // namespace uda
