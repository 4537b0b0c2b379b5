#pragma once

#include <cmath>
#include <cstddef>
#include <span>

// Accumulating kernels are kept out-of-line so that every call site runs the
// exact same machine code; inlining could let the optimizer pick a different
// vector reduction order per site and break bit-level reproducibility.
#if defined(__GNUC__) || defined(__clang__)
#define RGM_NOINLINE __attribute__((noinline))
#else
#define RGM_NOINLINE
#endif

namespace rgm::kernels {

// The tape forward and the incremental eval engine must produce bit-identical
// numbers for the same math, so both are built on this one set of row kernels.
// Accumulation order is part of each kernel's contract: ascending index, plain
// scalar accumulator of the value type.

template <typename T>
RGM_NOINLINE inline T dot(const T* a, const T* b, int n) {
  T acc = T(0);
  for (int i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

/// y[o] = dot(x, w_row_o) + b[o] for o in [0, out). w is (out, in) row-major.
template <typename T>
RGM_NOINLINE inline void linear_row(const T* x, const T* w, const T* b, T* y, int in, int out) {
  for (int o = 0; o < out; ++o) {
    const T acc = dot(x, w + static_cast<size_t>(o) * in, in);
    y[o] = (b != nullptr) ? acc + b[o] : acc;
  }
}

/// y += c * x (ascending index).
template <typename T>
RGM_NOINLINE inline void axpy(T c, const T* x, T* y, int n) {
  for (int i = 0; i < n; ++i) y[i] += c * x[i];
}

template <typename T>
RGM_NOINLINE inline T sum_sq(const T* x, int n) {
  T acc = T(0);
  for (int i = 0; i < n; ++i) acc += x[i] * x[i];
  return acc;
}

/// y[i] = x[i] / rms(x) * gain[i], rms = sqrt(mean(x^2) + eps).
template <typename T>
RGM_NOINLINE inline void rmsnorm_row(const T* x, const T* gain, T* y, int n, T eps) {
  const T ms = sum_sq(x, n) / static_cast<T>(n);
  const T inv = T(1) / std::sqrt(ms + eps);
  for (int i = 0; i < n; ++i) y[i] = x[i] * inv * gain[i];
}

/// In-place softmax over x[0..n); max-subtracted.
template <typename T>
RGM_NOINLINE inline void softmax_inplace(T* x, int n) {
  T m = x[0];
  for (int i = 1; i < n; ++i) m = (x[i] > m) ? x[i] : m;
  T sum = T(0);
  for (int i = 0; i < n; ++i) {
    x[i] = std::exp(x[i] - m);
    sum += x[i];
  }
  const T inv = T(1) / sum;
  for (int i = 0; i < n; ++i) x[i] *= inv;
}

/// log softmax(x)[idx] without materializing the distribution.
template <typename T>
RGM_NOINLINE inline T log_softmax_at(const T* x, int n, int idx) {
  T m = x[0];
  for (int i = 1; i < n; ++i) m = (x[i] > m) ? x[i] : m;
  T sum = T(0);
  for (int i = 0; i < n; ++i) sum += std::exp(x[i] - m);
  return (x[idx] - m) - std::log(sum);
}

template <typename T>
inline T relu(T x) {
  return x > T(0) ? x : T(0);
}

template <typename T>
inline T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

}  // namespace rgm::kernels
