#pragma once

#include <cstddef>

// Inner loops shared by the tensor ops. Reductions use a fixed lane layout so
// results depend only on the operand values and length, never on where the
// operands sit inside a larger batch.

namespace recog::kernels {

inline double dot(const double* a, const double* b, std::size_t n) {
  double lanes[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t l = 0; l < 8; ++l) lanes[l] += a[i + l] * b[i + l];
  }
  double tail = 0.0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
         ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7])) + tail;
}

// out[j] = dot(a, b + j * n, n) for j < 4, bit-identical to four dot calls.
inline void dot4(const double* a, const double* b, std::size_t n, double* out) {
  double lanes[4][8] = {};
  const double* b0 = b;
  const double* b1 = b + n;
  const double* b2 = b + 2 * n;
  const double* b3 = b + 3 * n;
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t l = 0; l < 8; ++l) {
      const double av = a[i + l];
      lanes[0][l] += av * b0[i + l];
      lanes[1][l] += av * b1[i + l];
      lanes[2][l] += av * b2[i + l];
      lanes[3][l] += av * b3[i + l];
    }
  }
  const double* bs[4] = {b0, b1, b2, b3};
  for (std::size_t j = 0; j < 4; ++j) {
    double tail = 0.0;
    for (std::size_t t = i; t < n; ++t) tail += a[t] * bs[j][t];
    const double* L = lanes[j];
    out[j] = ((L[0] + L[1]) + (L[2] + L[3])) + ((L[4] + L[5]) + (L[6] + L[7])) + tail;
  }
}

inline double total(const double* a, std::size_t n) {
  double lanes[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t l = 0; l < 8; ++l) lanes[l] += a[i + l];
  }
  double tail = 0.0;
  for (; i < n; ++i) tail += a[i];
  return ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
         ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7])) + tail;
}

// y += alpha * x
inline void axpy(double* y, double alpha, const double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace recog::kernels
