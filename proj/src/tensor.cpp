#include "dsgq/tensor.hpp"

#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>
#include <sstream>

namespace dsgq {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
  for (auto d : shape_)
    if (d == 0) throw Error("tensor dimensions must be positive");
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_)
    if (d == 0) throw Error("tensor dimensions must be positive");
  if (shape_size(shape_) != data_.size())
    throw Error("tensor shape " + shape_str(shape_) + " does not match " +
                std::to_string(data_.size()) + " elements");
}

Tensor Tensor::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
  if (rank() == 0 || begin >= end || end > shape_[0])
    throw Error("slice_rows: invalid range");
  Shape s = shape_;
  s[0] = end - begin;
  const std::size_t stride = size() / shape_[0];
  return Tensor(std::move(s),
                std::vector<double>(data_.begin() + begin * stride,
                                    data_.begin() + end * stride));
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

void Tensor::require_finite(const std::string& what) const {
  if (!all_finite()) throw Error("non-finite value in " + what);
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw Error("concat_rows: no parts");
  Shape s = parts[0].shape();
  std::vector<double> data;
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.rank() != s.size() ||
        !std::equal(s.begin() + 1, s.end(), p.shape().begin() + 1))
      throw Error("concat_rows: incompatible shapes");
    rows += p.dim(0);
    data.insert(data.end(), p.data().begin(), p.data().end());
  }
  s[0] = rows;
  return Tensor(std::move(s), std::move(data));
}

double norm(const Tensor& t) {
  double acc = 0.0;
  for (double v : t.data()) acc += v * v;
  return std::sqrt(acc);
}

std::uint64_t checksum(const Tensor& t) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (auto d : t.shape()) mix(&d, sizeof d);
  mix(t.data().data(), t.size() * sizeof(double));
  return h;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

Rng::Rng(std::uint64_t seed, Stream stream, std::uint64_t substream)
    : engine_(splitmix64(splitmix64(seed) ^
                         splitmix64(static_cast<std::uint64_t>(stream) << 32 ^
                                    substream))) {}

std::size_t Rng::index(std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
}

Tensor Rng::normal_tensor(Shape shape, double mean, double stddev) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = mean + stddev * normal();
  return t;
}

Tensor Rng::uniform_tensor(Shape shape) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = uniform();
  return t;
}

}  // namespace dsgq
