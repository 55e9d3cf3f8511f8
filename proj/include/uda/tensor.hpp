#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace uda {

using Index = Eigen::Index;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using ArrayX = Eigen::ArrayXd;

/// Dense multi-dimensional array of doubles, row-major storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<Index> shape);
  Tensor(std::vector<Index> shape, ArrayX data);

  static Tensor scalar(double v);
  static Tensor from_matrix(const Matrix& m);
  static Tensor from_vector(const Vector& v);
  static Tensor zeros(std::vector<Index> shape) { return Tensor(std::move(shape)); }

  const std::vector<Index>& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index numel() const { return data_.size(); }
  bool is_scalar() const { return data_.size() == 1; }

  // Rank-1 tensors count as a single row.
  Index rows() const;
  Index cols() const;

  double& operator[](Index i) { return data_[i]; }
  double operator[](Index i) const { return data_[i]; }
  double& at(Index r, Index c) { return data_[r * cols() + c]; }
  double at(Index r, Index c) const { return data_[r * cols() + c]; }

  ArrayX& array() { return data_; }
  const ArrayX& array() const { return data_; }

  Eigen::Map<const Matrix> as_matrix() const;
  Eigen::Map<Matrix> as_matrix();

  bool all_finite() const { return data_.isFinite().all(); }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

 private:
  std::vector<Index> shape_;
  ArrayX data_;
};

Tensor zeros_like(const Tensor& t);
bool bitwise_equal(const Tensor& a, const Tensor& b);

/// Product of shape dimensions; throws on nonpositive entries.
Index shape_numel(const std::vector<Index>& shape);

/// Row-wise softmax (or log-softmax) with max subtraction. Rank-1 input is
/// one row. Both the autodiff graph and the frozen evaluation path call this
/// one routine, so their probability outputs are bit-identical.
void softmax_rows(const Tensor& in, Tensor& out, bool log_form);

}  // namespace uda
