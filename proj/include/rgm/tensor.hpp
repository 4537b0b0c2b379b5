#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "rgm/common.hpp"
#include "rgm/rng.hpp"

namespace rgm {

/**
 * Dense row-major tensor. Scalar type is a template parameter: float for the
 * training/inference paths, double for finite-difference checks.
 */
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(checked_numel(shape), T(0)) {}
  Tensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    require(data.size() == checked_numel(shape), "tensor: data length does not match shape");
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

  static Tensor full(std::vector<int> s, T v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  static Tensor randn(std::vector<int> s, RngState& rng, T stddev) {
    Tensor t(std::move(s));
    for (auto& x : t.data) x = static_cast<T>(rng.normal()) * stddev;
    return t;
  }

  size_t numel() const { return data.size(); }
  int ndim() const { return static_cast<int>(shape.size()); }

  bool is_scalar() const { return numel() == 1; }

  int rows() const {
    require(ndim() == 2, "tensor: rows() needs a 2-d tensor");
    return shape[0];
  }
  int cols() const {
    require(ndim() == 2, "tensor: cols() needs a 2-d tensor");
    return shape[1];
  }

  T& at(int i) { return data[static_cast<size_t>(i)]; }
  T at(int i) const { return data[static_cast<size_t>(i)]; }
  T& at(int r, int c) { return data[static_cast<size_t>(r) * shape[1] + c]; }
  T at(int r, int c) const { return data[static_cast<size_t>(r) * shape[1] + c]; }

  std::span<T> row(int r) {
    return std::span<T>(data.data() + static_cast<size_t>(r) * shape[1], static_cast<size_t>(shape[1]));
  }
  std::span<const T> row(int r) const {
    return std::span<const T>(data.data() + static_cast<size_t>(r) * shape[1], static_cast<size_t>(shape[1]));
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (const T& x : data) {
      if (!std::isfinite(static_cast<double>(x))) return false;
    }
    return true;
  }

  static size_t checked_numel(const std::vector<int>& s) {
    size_t n = 1;
    for (int d : s) {
      require(d >= 0, "tensor: negative dimension");
      n *= static_cast<size_t>(d);
    }
    return n;
  }
};

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  out += ")";
  return out;
}

/// Named trainable tensor with a persistent gradient buffer.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(Tensor<T>::zeros(value.shape)) {}

  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), T(0)); }
};

}  // namespace rgm
