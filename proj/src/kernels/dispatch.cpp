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

#include <atomic>
#include <cstdlib>
#include <string>
#include <vector>

#include "gapose/kernels.hpp"

namespace gapose::kernels {

const KernelTable* avx2_table_if_compiled();

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

const KernelTable* best_table() {
  if (const KernelTable* t = avx2_table()) return t;
  return &scalar_table();
}

const KernelTable* initial_table() {
  if (const char* env = std::getenv("GAPOSE_KERNELS")) {
    const std::string want = env;
    if (want == "scalar") return &scalar_table();
    if (want == "avx2" && avx2_table()) return avx2_table();
  }
  return best_table();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{initial_table()};
  return table;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
  }
  return "unknown";
}

const KernelTable* avx2_table() {
  static const KernelTable* table = cpu_has_avx2() ? avx2_table_if_compiled() : nullptr;
  return table;
}

const KernelTable& active() { return *current().load(std::memory_order_relaxed); }

bool select(Isa isa) {
  const KernelTable* t = isa == Isa::scalar ? &scalar_table() : avx2_table();
  if (!t) return false;
  current().store(t, std::memory_order_relaxed);
  return true;
}

void select_best() { current().store(best_table(), std::memory_order_relaxed); }

std::uint64_t& mac_counter() {
  thread_local std::uint64_t count = 0;
  return count;
}

void gemm(Transpose ta, Transpose tb, std::size_t m, std::size_t n, std::size_t k, const double* a,
          std::size_t lda, const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  mac_counter() += static_cast<std::uint64_t>(m) * n * k;
  const KernelTable& t = active();
  if (tb == Transpose::yes) {
    // Materialize B^T as [k,n] so that the row kernels keep their k order.
    thread_local std::vector<double> bt;
    bt.resize(k * n);
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * ldb + p];
    }
    b = bt.data();
    ldb = n;
  }
  if (ta == Transpose::yes) {
    t.gemm_tn(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
  } else {
    t.gemm_nn(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
  }
}

}  // namespace gapose::kernels
