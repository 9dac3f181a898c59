#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"

namespace opdf {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense N-order tensor of doubles in row-major order. An empty shape denotes
/// a scalar (one element). Tensors are plain values; no operation mutates its
/// inputs.
class Tensor {
 public:
  Tensor() : shape_(), data_(1, 0.0) {}

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)), data_(checked_size(shape_), 0.0) {}

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    require(data_.size() == checked_size(shape_), ErrKind::ExtentMismatch,
            "data length ", data_.size(), " does not match shape ",
            shape_str(shape_));
  }

  static Tensor scalar(double v) {
    Tensor t;
    t.data_[0] = v;
    return t;
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, double v) {
    Tensor t(std::move(shape));
    for (double& x : t.data_) x = v;
    return t;
  }

  std::size_t order() const { return shape_.size(); }
  const Shape& shape() const { return shape_; }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  /// Element access by multi-index (debug/test convenience; row-major).
  double at(std::span<const std::size_t> idx) const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

 private:
  static std::size_t checked_size(const Shape& shape);

  Shape shape_;
  std::vector<double> data_;
};

// -- shape manipulation -------------------------------------------------

/// Metadata-only reshape; the row-major scalar sequence is unchanged.
Tensor reshape(const Tensor& t, Shape new_shape);

/// Axis permutation: out.shape[p] == t.shape[axes[p]].
Tensor permute(const Tensor& t, std::span<const std::size_t> axes);

/// Matricization. row_axes ++ col_axes must be a permutation of all axes;
/// equals reshape(permute(t, row_axes ++ col_axes), [prod rows, prod cols]).
Tensor unfold(const Tensor& t, std::span<const std::size_t> row_axes,
              std::span<const std::size_t> col_axes);

/// General pairwise contraction over the listed axis pairs. Empty axis lists
/// give the outer product. Free axes of a (in original order) precede free
/// axes of b in the result.
Tensor contract(const Tensor& a, const Tensor& b,
                std::span<const std::size_t> axes_a,
                std::span<const std::size_t> axes_b);

// -- arithmetic ----------------------------------------------------------

double frobenius_norm(const Tensor& t);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor hadamard(const Tensor& a, const Tensor& b);

/// 2-order matrix product [m,k] x [k,n] -> [m,n].
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& m);

/// Max absolute elementwise difference (shapes must agree).
double max_abs_diff(const Tensor& a, const Tensor& b);

/// ||a - b||_F / ||b||_F, with an absolute fallback when ||b||_F == 0.
double relative_error(const Tensor& a, const Tensor& b);

// -- TNSR binary format --------------------------------------------------
//
// Layout: magic "TNSR", version 0x01, dtype 0x00 (little-endian float64),
// order byte N, N little-endian uint64 extents, then the row-major payload.

void write_tnsr(const std::string& path, const Tensor& t);
Tensor read_tnsr(const std::string& path);

}  // namespace opdf
