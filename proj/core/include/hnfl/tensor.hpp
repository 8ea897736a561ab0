#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "hnfl/errors.hpp"
#include "hnfl/rng.hpp"

namespace hnfl {

/// Dense row-major tensor of doubles. Plain value type: copying copies the
/// buffer, no views, no strides. Everything in the library computes in f64;
/// wire-format element width is a separate accounting concern.
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::int64_t> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {}

  static std::int64_t numel_of(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }

  static Tensor zeros(std::vector<std::int64_t> shape) {
    auto n = numel_of(shape);
    return Tensor{std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0)};
  }

  static Tensor full(std::vector<std::int64_t> shape, double value) {
    auto n = numel_of(shape);
    return Tensor{std::move(shape), std::vector<double>(static_cast<std::size_t>(n), value)};
  }

  static Tensor randn(std::vector<std::int64_t> shape, Rng& rng, double stddev = 1.0) {
    Tensor t = zeros(std::move(shape));
    for (auto& v : t.data) v = rng.normal(0.0, stddev);
    return t;
  }

  /// Uniform in [-bound, bound].
  static Tensor rand_uniform(std::vector<std::int64_t> shape, Rng& rng, double bound) {
    Tensor t = zeros(std::move(shape));
    for (auto& v : t.data) v = rng.uniform(-bound, bound);
    return t;
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  std::int64_t ndim() const { return static_cast<std::int64_t>(shape.size()); }
  std::int64_t dim(std::int64_t i) const { return shape[static_cast<std::size_t>(i)]; }

  double& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

  // Indexed access for up to 4-d tensors; row-major.
  double& at(std::int64_t i, std::int64_t j) { return data[static_cast<std::size_t>(i * dim(1) + j)]; }
  double at(std::int64_t i, std::int64_t j) const {
    return data[static_cast<std::size_t>(i * dim(1) + j)];
  }
  double& at(std::int64_t b, std::int64_t c, std::int64_t h, std::int64_t w) {
    return data[static_cast<std::size_t>(((b * dim(1) + c) * dim(2) + h) * dim(3) + w)];
  }
  double at(std::int64_t b, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return data[static_cast<std::size_t>(((b * dim(1) + c) * dim(2) + h) * dim(3) + w)];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

std::string shape_str(const std::vector<std::int64_t>& shape);

/// Throws numeric_error if any element is NaN or Inf. Every kernel calls this
/// on its outputs: non-finite values are a hard error, never propagated.
void check_finite(const Tensor& t, const char* what);
void check_finite(double v, const char* what);

inline void require_shape(bool ok, const std::string& msg) {
  if (!ok) throw shape_error(msg);
}

}  // namespace hnfl
