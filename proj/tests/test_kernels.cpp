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

#include <cstring>
#include <vector>

#include "doctest.h"
#include "gapose/kernels.hpp"
#include "support.hpp"

using namespace gapose;
using namespace gapose::testing;
namespace k = gapose::kernels;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-2.0, 2.0);
  return v;
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_SUITE("kernels") {
  TEST_CASE("scalar gemm matches a triple loop with row strides") {
    Rng rng(1);
    const std::size_t m = 5, n = 7, kk = 3, lda = 4, ldb = 9, ldc = 8;
    const auto a = random_vec(rng, m * lda), b = random_vec(rng, kk * ldb);
    std::vector<double> c(m * ldc, 0.5);
    k::scalar_table().gemm_nn(m, n, kk, a.data(), lda, b.data(), ldb, c.data(), ldc, true);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t p = 0; p < kk; ++p) acc += a[i * lda + p] * b[p * ldb + j];
        CHECK(c[i * ldc + j] == doctest::Approx(0.5 + acc).epsilon(1e-14));
      }
    CHECK(c[n] == 0.5);
  }

  TEST_CASE("gemm counts multiply-accumulates") {
    const std::uint64_t before = k::mac_counter();
    std::vector<double> a(6, 1.0), b(12, 1.0), c(8);
    k::gemm(k::Transpose::no, k::Transpose::no, 2, 4, 3, a.data(), 3, b.data(), 4, c.data(), 4, false);
    CHECK(k::mac_counter() - before == 24);
    CHECK(c[0] == 3.0);
  }

  TEST_CASE("avx2 kernels are bitwise identical to scalar") {
    const k::KernelTable* simd = k::avx2_table();
    if (simd == nullptr) {
      MESSAGE("AVX2 not available on this host; equivalence not exercised");
      return;
    }
    const k::KernelTable& ref = k::scalar_table();
    Rng rng(2);
    for (int trial = 0; trial < 300; ++trial) {
      const auto m = static_cast<std::size_t>(random_int(rng, 1, 19));
      const auto n = static_cast<std::size_t>(random_int(rng, 1, 37));
      const auto kk = static_cast<std::size_t>(random_int(rng, 1, 23));
      const bool acc = rng.uniform() < 0.5;
      const std::size_t pad = static_cast<std::size_t>(random_int(rng, 0, 3));
      {
        const std::size_t lda = kk + pad, ldb = n + pad, ldc = n + pad;
        const auto a = random_vec(rng, m * lda), b = random_vec(rng, kk * ldb), c0 = random_vec(rng, m * ldc);
        auto c1 = c0, c2 = c0;
        ref.gemm_nn(m, n, kk, a.data(), lda, b.data(), ldb, c1.data(), ldc, acc);
        simd->gemm_nn(m, n, kk, a.data(), lda, b.data(), ldb, c2.data(), ldc, acc);
        REQUIRE(bitwise_equal(c1, c2));
      }
      {
        const std::size_t lda = m + pad, ldb = n + pad, ldc = n + pad;
        const auto a = random_vec(rng, kk * lda), b = random_vec(rng, kk * ldb), c0 = random_vec(rng, m * ldc);
        auto c1 = c0, c2 = c0;
        ref.gemm_tn(m, n, kk, a.data(), lda, b.data(), ldb, c1.data(), ldc, acc);
        simd->gemm_tn(m, n, kk, a.data(), lda, b.data(), ldb, c2.data(), ldc, acc);
        REQUIRE(bitwise_equal(c1, c2));
      }
      const auto len = static_cast<std::size_t>(random_int(rng, 0, 70));
      const auto x = random_vec(rng, len), y = random_vec(rng, len);
      const double alpha = rng.uniform(-3.0, 3.0);
      std::vector<double> o1(len), o2(len);
      ref.add(len, x.data(), y.data(), o1.data());
      simd->add(len, x.data(), y.data(), o2.data());
      REQUIRE(bitwise_equal(o1, o2));
      ref.mul(len, x.data(), y.data(), o1.data());
      simd->mul(len, x.data(), y.data(), o2.data());
      REQUIRE(bitwise_equal(o1, o2));
      ref.scale(len, alpha, x.data(), o1.data());
      simd->scale(len, alpha, x.data(), o2.data());
      REQUIRE(bitwise_equal(o1, o2));
      o1 = y;
      o2 = y;
      ref.axpy(len, alpha, x.data(), o1.data());
      simd->axpy(len, alpha, x.data(), o2.data());
      REQUIRE(bitwise_equal(o1, o2));

      const k::AdamCoefficients co{1e-3, 0.9, 0.999, 1e-8, 1.0 - 0.9 * 0.9, 1.0 - 0.999 * 0.999};
      auto p1 = random_vec(rng, len), m1 = random_vec(rng, len), v1 = random_vec(rng, len);
      for (double& v : v1) v = std::abs(v);
      auto p2 = p1, m2 = m1, v2 = v1;
      ref.adam(len, co, p1.data(), x.data(), m1.data(), v1.data());
      simd->adam(len, co, p2.data(), x.data(), m2.data(), v2.data());
      REQUIRE(bitwise_equal(p1, p2));
      REQUIRE(bitwise_equal(m1, m2));
      REQUIRE(bitwise_equal(v1, v2));
    }
  }

  TEST_CASE("runtime selection switches the active table") {
    const k::Isa original = k::active().isa;
    CHECK(k::select(k::Isa::scalar));
    CHECK(k::active().isa == k::Isa::scalar);
    CHECK(k::select(k::Isa::avx2) == (k::avx2_table() != nullptr));
    k::select(original);
    CHECK(k::isa_name(k::Isa::scalar) == "scalar");
  }
}
