// Copyright 2026 The gapose Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Scalar reference kernels. These define the rounding order every other
// variant must reproduce.

#include <cmath>
#include <cstring>

#include "gapose/kernels.hpp"

namespace gapose::kernels {
namespace scalar_impl {

template <bool TransA>
void gemm_ref(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
              std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * ldc;
    if (!accumulate) std::memset(crow, 0, n * sizeof(double));
    for (std::size_t p = 0; p < k; ++p) {
      const double av = TransA ? a[p * lda + i] : a[i * lda + p];
      const double* brow = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) crow[j] = crow[j] + av * brow[j];
    }
  }
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  gemm_ref<false>(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  gemm_ref<true>(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

void add(std::size_t n, const double* a, const double* b, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void mul(std::size_t n, const double* a, const double* b, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void axpy(std::size_t n, double alpha, const double* x, double* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

void scale(std::size_t n, double alpha, const double* x, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = alpha * x[i];
}

void adam(std::size_t n, const AdamCoefficients& c, double* param, const double* grad, double* m, double* v) {
  const double one_minus_b1 = 1.0 - c.beta1;
  const double one_minus_b2 = 1.0 - c.beta2;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad[i];
    m[i] = c.beta1 * m[i] + one_minus_b1 * g;
    v[i] = c.beta2 * v[i] + one_minus_b2 * (g * g);
    const double m_hat = m[i] / c.bias_correction1;
    const double v_hat = v[i] / c.bias_correction2;
    param[i] = param[i] - c.lr * (m_hat / (std::sqrt(v_hat) + c.eps));
  }
}

}  // namespace scalar_impl

const KernelTable& scalar_table() {
  static const KernelTable table{Isa::scalar, scalar_impl::gemm_nn, scalar_impl::gemm_tn, scalar_impl::add,
                                  scalar_impl::mul, scalar_impl::axpy, scalar_impl::scale, scalar_impl::adam};
  return table;
}

}  // namespace gapose::kernels
