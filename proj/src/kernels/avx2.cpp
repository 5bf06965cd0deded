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

// AVX2 kernels, built with -mavx2 -mno-fma. Bitwise equal to the scalar table.

#include "gapose/kernels.hpp"

#if defined(__AVX2__)

#include <immintrin.h>

#include <cmath>

namespace gapose::kernels {
namespace avx2_impl {

template <bool TransA>
inline double a_at(const double* a, std::size_t lda, std::size_t i, std::size_t p) {
  return TransA ? a[p * lda + i] : a[i * lda + p];
}

// 4x8 register tile: rows i..i+3, columns j..j+7, k walked in order.
template <bool TransA>
inline void tile_4x8(std::size_t k, const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c,
                     std::size_t ldc, std::size_t i, std::size_t j, bool accumulate) {
  __m256d acc[4][2];
  for (int r = 0; r < 4; ++r) {
    if (accumulate) {
      acc[r][0] = _mm256_loadu_pd(c + (i + r) * ldc + j);
      acc[r][1] = _mm256_loadu_pd(c + (i + r) * ldc + j + 4);
    } else {
      acc[r][0] = _mm256_setzero_pd();
      acc[r][1] = _mm256_setzero_pd();
    }
  }
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d b0 = _mm256_loadu_pd(b + p * ldb + j);
    const __m256d b1 = _mm256_loadu_pd(b + p * ldb + j + 4);
    for (int r = 0; r < 4; ++r) {
      const __m256d av = _mm256_set1_pd(a_at<TransA>(a, lda, i + r, p));
      acc[r][0] = _mm256_add_pd(acc[r][0], _mm256_mul_pd(av, b0));
      acc[r][1] = _mm256_add_pd(acc[r][1], _mm256_mul_pd(av, b1));
    }
  }
  for (int r = 0; r < 4; ++r) {
    _mm256_storeu_pd(c + (i + r) * ldc + j, acc[r][0]);
    _mm256_storeu_pd(c + (i + r) * ldc + j + 4, acc[r][1]);
  }
}

// Single row, columns [j, n): 4-wide vectors then scalar tail.
template <bool TransA>
inline void row_strip(std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
                      std::size_t ldb, double* c, std::size_t ldc, std::size_t i, std::size_t j, bool accumulate) {
  double* crow = c + i * ldc;
  for (; j + 4 <= n; j += 4) {
    __m256d acc = accumulate ? _mm256_loadu_pd(crow + j) : _mm256_setzero_pd();
    for (std::size_t p = 0; p < k; ++p) {
      const __m256d av = _mm256_set1_pd(a_at<TransA>(a, lda, i, p));
      acc = _mm256_add_pd(acc, _mm256_mul_pd(av, _mm256_loadu_pd(b + p * ldb + j)));
    }
    _mm256_storeu_pd(crow + j, acc);
  }
  for (; j < n; ++j) {
    double acc = accumulate ? crow[j] : 0.0;
    for (std::size_t p = 0; p < k; ++p) acc = acc + a_at<TransA>(a, lda, i, p) * b[p * ldb + j];
    crow[j] = acc;
  }
}

template <bool TransA>
void gemm_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
               std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  const std::size_t n8 = n - n % 8;
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    for (std::size_t j = 0; j < n8; j += 8) tile_4x8<TransA>(k, a, lda, b, ldb, c, ldc, i, j, accumulate);
    for (std::size_t r = 0; r < 4; ++r) row_strip<TransA>(n, k, a, lda, b, ldb, c, ldc, i + r, n8, accumulate);
  }
  for (; i < m; ++i) row_strip<TransA>(n, k, a, lda, b, ldb, c, ldc, i, 0, accumulate);
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  gemm_avx2<false>(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  gemm_avx2<true>(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

void add(std::size_t n, const double* a, const double* b, double* out) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void mul(std::size_t n, const double* a, const double* b, double* out) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void axpy(std::size_t n, double alpha, const double* x, double* y) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), _mm256_mul_pd(va, _mm256_loadu_pd(x + i))));
  }
  for (; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

void scale(std::size_t n, double alpha, const double* x, double* out) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) out[i] = alpha * x[i];
}

void adam(std::size_t n, const AdamCoefficients& c, double* param, const double* grad, double* m, double* v) {
  const double one_minus_b1 = 1.0 - c.beta1;
  const double one_minus_b2 = 1.0 - c.beta2;
  const __m256d b1 = _mm256_set1_pd(c.beta1);
  const __m256d b2 = _mm256_set1_pd(c.beta2);
  const __m256d omb1 = _mm256_set1_pd(one_minus_b1);
  const __m256d omb2 = _mm256_set1_pd(one_minus_b2);
  const __m256d bc1 = _mm256_set1_pd(c.bias_correction1);
  const __m256d bc2 = _mm256_set1_pd(c.bias_correction2);
  const __m256d lr = _mm256_set1_pd(c.lr);
  const __m256d eps = _mm256_set1_pd(c.eps);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d g = _mm256_loadu_pd(grad + i);
    const __m256d mi = _mm256_add_pd(_mm256_mul_pd(b1, _mm256_loadu_pd(m + i)), _mm256_mul_pd(omb1, g));
    const __m256d vi =
        _mm256_add_pd(_mm256_mul_pd(b2, _mm256_loadu_pd(v + i)), _mm256_mul_pd(omb2, _mm256_mul_pd(g, g)));
    _mm256_storeu_pd(m + i, mi);
    _mm256_storeu_pd(v + i, vi);
    const __m256d m_hat = _mm256_div_pd(mi, bc1);
    const __m256d v_hat = _mm256_div_pd(vi, bc2);
    const __m256d step = _mm256_mul_pd(lr, _mm256_div_pd(m_hat, _mm256_add_pd(_mm256_sqrt_pd(v_hat), eps)));
    _mm256_storeu_pd(param + i, _mm256_sub_pd(_mm256_loadu_pd(param + i), step));
  }
  for (; i < n; ++i) {
    const double g = grad[i];
    m[i] = c.beta1 * m[i] + one_minus_b1 * g;
    v[i] = c.beta2 * v[i] + one_minus_b2 * (g * g);
    const double m_hat = m[i] / c.bias_correction1;
    const double v_hat = v[i] / c.bias_correction2;
    param[i] = param[i] - c.lr * (m_hat / (std::sqrt(v_hat) + c.eps));
  }
}

}  // namespace avx2_impl

const KernelTable* avx2_table_if_compiled() {
  static const KernelTable table{Isa::avx2, avx2_impl::gemm_nn, avx2_impl::gemm_tn, avx2_impl::add,
                                  avx2_impl::mul, avx2_impl::axpy, avx2_impl::scale, avx2_impl::adam};
  return &table;
}

}  // namespace gapose::kernels

#else

namespace gapose::kernels {
const KernelTable* avx2_table_if_compiled() { return nullptr; }
}  // namespace gapose::kernels

#endif
