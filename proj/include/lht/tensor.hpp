#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace lht {

/// Dense row-major float32 tensor. Value type; copies are deep.
class Tensor {
 public:
  Tensor() = default;
  /// Zero-filled tensor of the given shape.
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<float> data);

  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::initializer_list<float> values);
  static Tensor vector(std::initializer_list<float> values);

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  /// Extent of dimension 0 of a rank-2 tensor.
  std::size_t rows() const;
  /// Extent of dimension 1 of a rank-2 tensor.
  std::size_t cols() const;

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  const std::vector<float>& values() const noexcept { return data_; }

  float& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  float at(std::size_t r, std::size_t c) const {
    return data_[r * shape_[1] + c];
  }
  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  std::span<float> row(std::size_t r);
  std::span<const float> row(std::size_t r) const;

  /// Rows [first, first + count) as a new matrix.
  Tensor slice_rows(std::size_t first, std::size_t count) const;

  /// Same data, new shape with equal element count.
  Tensor reshaped(std::vector<std::size_t> shape) const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<float> data_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

/// Throws NumericError naming `what` if any element is NaN or Inf.
void require_finite(std::span<const float> values, const char* what);

// Kernels. All are pure; `threads` only partitions independent output rows,
// so results are bit-identical for every thread count.

/// a[m×k] · b[k×n]. Dot products accumulate in double in a fixed k order.
Tensor matmul(const Tensor& a, const Tensor& b, int threads = 1);

/// a[m×k] · b[n×k]ᵀ.
Tensor matmul_bt(const Tensor& a, const Tensor& b, int threads = 1);

/// Adds `bias` (length = cols) to every row in place.
void add_row_bias(Tensor& x, const Tensor& bias);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  float eps = 1e-5F);

/// Numerically stable softmax along each row.
Tensor row_softmax(const Tensor& x);

/// Exact x·Φ(x) with Φ from erf.
Tensor gelu(const Tensor& x);

/// x·σ(1.702x), the activation used by the OpenAI CLIP checkpoints.
Tensor quick_gelu(const Tensor& x);

/// Pairwise cosine similarity, entry (i,j) = cos(a_i, b_j).
Tensor cosine_rows(const Tensor& a, const Tensor& b);

/// Each row scaled to unit L2 norm. Throws NumericError on a zero row.
Tensor normalize_rows(const Tensor& x);

}  // namespace lht
