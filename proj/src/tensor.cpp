#include "lht/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <thread>

#include "lht/error.hpp"

namespace lht {
namespace {

std::size_t element_count(const std::vector<std::size_t>& shape) {
  if (shape.empty()) return 0;
  std::size_t n = 1;
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " +
                                 shape_string(shape));
    n *= e;
  }
  return n;
}

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2)
    throw ShapeError(std::string(what) + ": expected a matrix, got shape " +
                     shape_string(t.shape()));
}

// Runs fn(begin, end) over contiguous row blocks. Each output row is written
// by exactly one worker, so the partition never changes the result.
void for_row_blocks(std::size_t rows, int threads,
                    const std::function<void(std::size_t, std::size_t)>& fn) {
  const auto workers = static_cast<std::size_t>(
      std::clamp<long>(threads, 1, static_cast<long>(std::max<std::size_t>(rows, 1))));
  if (workers <= 1) {
    fn(0, rows);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (rows + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(rows, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back(fn, begin, end);
  }
  for (auto& t : pool) t.join();
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(element_count(shape_), 0.0F) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (element_count(shape_) != data_.size())
    throw ShapeError("shape " + shape_string(shape_) + " does not match " +
                     std::to_string(data_.size()) + " values");
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::initializer_list<float> values) {
  return Tensor({rows, cols}, std::vector<float>(values));
}

Tensor Tensor::vector(std::initializer_list<float> values) {
  return Tensor({values.size()}, std::vector<float>(values));
}

std::size_t Tensor::rows() const {
  require_matrix(*this, "rows()");
  return shape_[0];
}

std::size_t Tensor::cols() const {
  require_matrix(*this, "cols()");
  return shape_[1];
}

std::span<float> Tensor::row(std::size_t r) {
  const std::size_t c = cols();
  return std::span<float>(data_).subspan(r * c, c);
}

std::span<const float> Tensor::row(std::size_t r) const {
  const std::size_t c = cols();
  return std::span<const float>(data_).subspan(r * c, c);
}

Tensor Tensor::slice_rows(std::size_t first, std::size_t count) const {
  const std::size_t c = cols();
  if (first + count > rows())
    throw ShapeError("row slice out of range");
  auto begin = data_.begin() + static_cast<std::ptrdiff_t>(first * c);
  return Tensor({count, c},
                std::vector<float>(begin, begin + static_cast<std::ptrdiff_t>(count * c)));
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
  return Tensor(std::move(shape), data_);
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void require_finite(std::span<const float> values, const char* what) {
  for (float v : values)
    if (!std::isfinite(v))
      throw NumericError(std::string(what) + ": non-finite value");
}

Tensor matmul(const Tensor& a, const Tensor& b, int threads) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw ShapeError("matmul: inner extents differ, " + shape_string(a.shape()) +
                     " x " + shape_string(b.shape()));
  Tensor out({m, n});
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  float* po = out.data().data();
  for_row_blocks(m, threads, [&](std::size_t begin, std::size_t end) {
    std::vector<double> acc(n);
    for (std::size_t i = begin; i < end; ++i) {
      std::fill(acc.begin(), acc.end(), 0.0);
      const float* arow = pa + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = arow[p];
        const float* brow = pb + p * n;
        for (std::size_t j = 0; j < n; ++j) acc[j] += av * brow[j];
      }
      float* orow = po + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] = static_cast<float>(acc[j]);
    }
  });
  require_finite(out.data(), "matmul");
  return out;
}

Tensor matmul_bt(const Tensor& a, const Tensor& b, int threads) {
  require_matrix(a, "matmul_bt");
  require_matrix(b, "matmul_bt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k)
    throw ShapeError("matmul_bt: inner extents differ, " +
                     shape_string(a.shape()) + " x " +
                     shape_string(b.shape()) + "^T");
  Tensor out({m, n});
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  float* po = out.data().data();
  for_row_blocks(m, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const float* arow = pa + i * k;
      for (std::size_t j = 0; j < n; ++j) {
        const float* brow = pb + j * k;
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p)
          acc += static_cast<double>(arow[p]) * brow[p];
        po[i * n + j] = static_cast<float>(acc);
      }
    }
  });
  require_finite(out.data(), "matmul_bt");
  return out;
}

void add_row_bias(Tensor& x, const Tensor& bias) {
  const std::size_t n = x.cols();
  if (bias.size() != n)
    throw ShapeError("add_row_bias: bias length " + std::to_string(bias.size()) +
                     " vs " + std::to_string(n) + " columns");
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = x.row(r);
    for (std::size_t j = 0; j < n; ++j) row[j] += bias[j];
  }
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  float eps) {
  require_matrix(x, "layer_norm");
  const std::size_t d = x.cols();
  if (gain.size() != d || bias.size() != d)
    throw ShapeError("layer_norm: gain/bias length must equal " +
                     std::to_string(d));
  if (!(eps > 0.0F)) throw ShapeError("layer_norm: eps must be positive");
  Tensor out(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    auto o = out.row(r);
    double mean = 0.0;
    for (float v : in) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (float v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
    for (std::size_t j = 0; j < d; ++j)
      o[j] = static_cast<float>((in[j] - mean) * inv * gain[j] + bias[j]);
  }
  require_finite(out.data(), "layer_norm");
  return out;
}

Tensor row_softmax(const Tensor& x) {
  require_matrix(x, "row_softmax");
  Tensor out(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    auto o = out.row(r);
    const float mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      const double e = std::exp(static_cast<double>(in[j]) - mx);
      o[j] = static_cast<float>(e);
      sum += e;
    }
    for (auto& v : o) v = static_cast<float>(v / sum);
  }
  require_finite(out.data(), "row_softmax");
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out = x;
  for (auto& v : out.data()) {
    const double d = v;
    v = static_cast<float>(0.5 * d * (1.0 + std::erf(d / std::sqrt(2.0))));
  }
  require_finite(out.data(), "gelu");
  return out;
}

Tensor quick_gelu(const Tensor& x) {
  Tensor out = x;
  for (auto& v : out.data()) {
    const double d = v;
    v = static_cast<float>(d / (1.0 + std::exp(-1.702 * d)));
  }
  require_finite(out.data(), "quick_gelu");
  return out;
}

namespace {

std::vector<double> row_norms(const Tensor& x, const char* what) {
  std::vector<double> norms(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double s = 0.0;
    for (float v : x.row(r)) s += static_cast<double>(v) * v;
    norms[r] = std::sqrt(s);
    if (!(norms[r] > 0.0))
      throw NumericError(std::string(what) + ": zero-norm row " +
                         std::to_string(r));
  }
  return norms;
}

}  // namespace

Tensor cosine_rows(const Tensor& a, const Tensor& b) {
  require_matrix(a, "cosine_rows");
  require_matrix(b, "cosine_rows");
  if (a.cols() != b.cols())
    throw ShapeError("cosine_rows: feature widths differ, " +
                     shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  const auto na = row_norms(a, "cosine_rows");
  const auto nb = row_norms(b, "cosine_rows");
  const std::size_t d = a.cols();
  Tensor out({a.rows(), b.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ai = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto bj = b.row(j);
      double dot = 0.0;
      for (std::size_t p = 0; p < d; ++p)
        dot += static_cast<double>(ai[p]) * bj[p];
      out.at(i, j) =
          static_cast<float>(std::clamp(dot / (na[i] * nb[j]), -1.0, 1.0));
    }
  }
  return out;
}

Tensor normalize_rows(const Tensor& x) {
  require_matrix(x, "normalize_rows");
  const auto norms = row_norms(x, "normalize_rows");
  Tensor out = x;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (auto& v : out.row(r)) v = static_cast<float>(v / norms[r]);
  return out;
}

}  // namespace lht
