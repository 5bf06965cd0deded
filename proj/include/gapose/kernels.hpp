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

// Arithmetic inner loops with a scalar reference variant and SIMD variants
// selected at runtime.
//
// Every SIMD variant vectorizes across independent outputs only: each output
// element is accumulated in the same order, with the same separate multiply
// and add roundings, as the scalar reference. Variants therefore agree
// bitwise, which the kernel equivalence tests assert.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace gapose::kernels {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);

struct AdamCoefficients {
  double lr;
  double beta1;
  double beta2;
  double eps;
  double bias_correction1;  // 1 - beta1^t
  double bias_correction2;  // 1 - beta2^t
};

// Raw kernel entry points. Matrices are row-major with explicit leading
// dimensions; `accumulate` adds into C instead of overwriting it.
struct KernelTable {
  Isa isa;
  // C[m,n] (+)= sum_k A[m,k] * B[k,n]
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                  const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate);
  // C[m,n] (+)= sum_k A[k,m] * B[k,n]
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                  const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate);
  // out[i] = a[i] + b[i]
  void (*add)(std::size_t n, const double* a, const double* b, double* out);
  // out[i] = a[i] * b[i]
  void (*mul)(std::size_t n, const double* a, const double* b, double* out);
  // y[i] += alpha * x[i]
  void (*axpy)(std::size_t n, double alpha, const double* x, double* y);
  // out[i] = alpha * x[i]
  void (*scale)(std::size_t n, double alpha, const double* x, double* out);
  // In-place Adam moment and parameter update.
  void (*adam)(std::size_t n, const AdamCoefficients& c, double* param, const double* grad, double* m, double* v);
};

const KernelTable& scalar_table();
// nullptr when the variant is not compiled in or the CPU lacks the ISA.
const KernelTable* avx2_table();

// Best table supported by the running CPU, unless overridden through
// GAPOSE_KERNELS=scalar|avx2 or select().
const KernelTable& active();
// Forces a variant; returns false when unavailable.
bool select(Isa isa);
void select_best();

// Multiply-accumulate counter for the calling thread, advanced by the gemm
// entry points below.
std::uint64_t& mac_counter();

enum class Transpose { no, yes };

// Dispatching gemm: C[m,n] (+)= op(A)[m,k] * op(B)[k,n].
// op(A) = A[m,k] with lda, or A^T with A stored [k,m].
// op(B) = B[k,n] with ldb, or B^T with B stored [n,k].
void gemm(Transpose ta, Transpose tb, std::size_t m, std::size_t n, std::size_t k, const double* a,
          std::size_t lda, const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate);

inline void add(std::size_t n, const double* a, const double* b, double* out) { active().add(n, a, b, out); }
inline void mul(std::size_t n, const double* a, const double* b, double* out) { active().mul(n, a, b, out); }
inline void axpy(std::size_t n, double alpha, const double* x, double* y) { active().axpy(n, alpha, x, y); }
inline void scale(std::size_t n, double alpha, const double* x, double* out) { active().scale(n, alpha, x, out); }

}  // namespace gapose::kernels
