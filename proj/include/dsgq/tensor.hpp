#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dsgq {

/// Raised for invalid arguments, shape mismatches and non-finite values.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid user configuration (bad flag values, config fields, bit-widths).
class ConfigError : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles. product(shape) == data.size() always.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }
  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // 2-D access.
  std::size_t rows() const { return shape_.at(0); }
  std::size_t cols() const { return rank() == 1 ? 1 : size() / shape_.at(0); }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols(), cols());
  }
  std::span<double> row(std::size_t r) {
    return std::span<double>(data_).subspan(r * cols(), cols());
  }

  /// Same data viewed with a new shape of equal size.
  Tensor reshaped(Shape shape) const;

  /// Rows [begin, end) along the leading dimension.
  Tensor slice_rows(std::size_t begin, std::size_t end) const;

  bool all_finite() const;

  /// Throws Error naming `what` if any element is NaN or infinite.
  void require_finite(const std::string& what) const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Concatenates tensors along the leading dimension.
Tensor concat_rows(std::span<const Tensor> parts);

/// Frobenius / l2 norm of all elements.
double norm(const Tensor& t);

/// FNV-1a over the raw bytes of the data and shape.
std::uint64_t checksum(const Tensor& t);

/// Named RNG streams. Each purpose gets an independent 64-bit generator
/// derived from (seed, stream) so that adding draws to one purpose never
/// shifts the others.
enum class Stream : std::uint64_t {
  Init = 1,
  Data = 2,
  Noise = 3,
  Synth = 4,
  Probe = 5,
  Labels = 6,
  Shuffle = 7,
};

class Rng {
 public:
  Rng(std::uint64_t seed, Stream stream, std::uint64_t substream = 0);

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  std::size_t index(std::size_t n);
  std::mt19937_64& engine() { return engine_; }

  Tensor normal_tensor(Shape shape, double mean = 0.0, double stddev = 1.0);
  Tensor uniform_tensor(Shape shape);

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace dsgq
