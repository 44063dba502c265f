#include <doctest.h>

#include <vector>

#include "lfuse/gradcheck.hpp"
#include "lfuse/kernels.hpp"
#include "lfuse/rng.hpp"

using namespace lfuse;
using kernels::Backend;

namespace {

template <typename T>
std::vector<T> draw(Rng& rng, std::size_t n) {
  std::vector<T> v(n);
  for (T& x : v) x = static_cast<T>(rng.normal());
  return v;
}

template <typename T>
double rel(const std::vector<T>& a, const std::vector<T>& b) {
  return relative_error(Tensor<T>({a.size()}, a), Tensor<T>({b.size()}, b));
}

// Sizes straddle the vector width and its remainders.
constexpr std::size_t kSizes[] = {1, 3, 4, 7, 8, 9, 15, 16, 17, 33, 64, 101};

template <typename T>
void compare_tables(const kernels::KernelTable<T>& ref, const kernels::KernelTable<T>& vec,
                    double tol) {
  Rng rng(17);
  for (std::size_t n : kSizes) {
    const auto a = draw<T>(rng, n), b = draw<T>(rng, n);
    const double d0 = ref.dot(a.data(), b.data(), n), d1 = vec.dot(a.data(), b.data(), n);
    CHECK(std::abs(d0 - d1) <= tol * (1 + std::abs(d0)) * n);

    auto y0 = draw<T>(rng, n), y1 = y0;
    ref.axpy(T(0.37), a.data(), y0.data(), n);
    vec.axpy(T(0.37), a.data(), y1.data(), n);
    CHECK(rel(y0, y1) <= tol);
  }
  for (std::size_t m : {1, 5, 8}) {
    for (std::size_t n : {1, 7, 16, 19}) {
      for (std::size_t k : {1, 4, 9, 32}) {
        const auto a = draw<T>(rng, m * k), b = draw<T>(rng, k * n), bt = draw<T>(rng, n * k),
                   at = draw<T>(rng, k * m);
        const auto c = draw<T>(rng, m * n);
        auto c0 = c, c1 = c;
        ref.gemm_nn(m, n, k, a.data(), b.data(), c0.data());
        vec.gemm_nn(m, n, k, a.data(), b.data(), c1.data());
        CHECK(rel(c0, c1) <= tol);
        c0 = c, c1 = c;
        ref.gemm_nt(m, n, k, a.data(), bt.data(), c0.data());
        vec.gemm_nt(m, n, k, a.data(), bt.data(), c1.data());
        CHECK(rel(c0, c1) <= tol);
        c0 = c, c1 = c;
        ref.gemm_tn(m, n, k, at.data(), b.data(), c0.data());
        vec.gemm_tn(m, n, k, at.data(), b.data(), c1.data());
        CHECK(rel(c0, c1) <= tol);
      }
    }
  }
}

}  // namespace

TEST_SUITE("kernels") {
  TEST_CASE("scalar gemm matches a plain loop") {
    const auto& s = kernels::scalar_table_f64();
    const std::vector<double> a = {1, 2, 3, 4, 5, 6}, b = {1, 0, -1, 2, 0.5, 1};  // 2x3, 3x2
    std::vector<double> c(4, 1.0);
    s.gemm_nn(2, 2, 3, a.data(), b.data(), c.data());
    CHECK(c == std::vector<double>{1.5, 8, 3, 17});
    CHECK(s.dot(a.data(), a.data(), 3) == 14.0);
  }

  TEST_CASE("backend names round-trip") {
    for (Backend b : {Backend::kScalar, Backend::kAvx2, Backend::kNeon}) {
      CHECK(kernels::parse_backend(kernels::backend_name(b)) == b);
    }
    CHECK_THROWS_AS(kernels::parse_backend("sse9"), ConfigError);
    CHECK(kernels::backend_supported(Backend::kScalar));
  }

  TEST_CASE("unsupported backend is rejected") {
    for (Backend b : {Backend::kAvx2, Backend::kNeon}) {
      if (!kernels::backend_supported(b)) CHECK_THROWS_AS(kernels::set_backend(b), ConfigError);
    }
  }

  TEST_CASE("vector backends agree with the scalar reference") {
    for (Backend b : {Backend::kAvx2, Backend::kNeon}) {
      if (!kernels::backend_supported(b)) {
        MESSAGE("skipping " << kernels::backend_name(b) << ": not supported here");
        continue;
      }
      compare_tables(kernels::table_for<double>(Backend::kScalar), kernels::table_for<double>(b),
                     1e-13);
      compare_tables(kernels::table_for<float>(Backend::kScalar), kernels::table_for<float>(b),
                     1e-5);
    }
  }

  TEST_CASE("switching backends keeps a set selection") {
    const Backend before = kernels::active_backend();
    kernels::set_backend(Backend::kScalar);
    CHECK(kernels::active_backend() == Backend::kScalar);
    kernels::set_backend(before);
    CHECK(kernels::active_backend() == before);
  }
}
