#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "lls/kernels.hpp"

using namespace lls;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-2.0, 2.0);
    std::vector<double> v(n);
    for (auto& x : v) x = dist(rng);
    return v;
}

bool have_simd_variant() {
#if defined(__x86_64__)
    return kernels::cpu_has_avx2();
#elif defined(__aarch64__)
    return true;
#else
    return false;
#endif
}

const kernels::Ops& simd_variant() {
#if defined(__x86_64__)
    return kernels::avx2_ops();
#elif defined(__aarch64__)
    return kernels::neon_ops();
#else
    return kernels::scalar_ops();
#endif
}

}  // namespace

TEST_CASE("dispatch selects a variant and can be forced") {
    CHECK(kernels::active_name() != nullptr);
    kernels::set_active(&kernels::scalar_ops(), "scalar");
    CHECK(std::string(kernels::active_name()) == "scalar");
    kernels::set_active(nullptr, nullptr);
}

TEST_CASE("elementwise kernels are bit-identical across variants") {
    if (!have_simd_variant()) return;
    const auto& s = kernels::scalar_ops();
    const auto& v = simd_variant();
    std::mt19937_64 rng(7);
    // odd sizes exercise the scalar tails
    for (std::size_t n : {1u, 3u, 8u, 17u, 64u, 1001u}) {
        auto a = random_vec(n, rng), b = random_vec(n, rng);
        std::vector<double> r1(n), r2(n);

        s.add(a.data(), b.data(), r1.data(), n);
        v.add(a.data(), b.data(), r2.data(), n);
        CHECK(r1 == r2);
        s.sub(a.data(), b.data(), r1.data(), n);
        v.sub(a.data(), b.data(), r2.data(), n);
        CHECK(r1 == r2);
        s.mul(a.data(), b.data(), r1.data(), n);
        v.mul(a.data(), b.data(), r2.data(), n);
        CHECK(r1 == r2);
        s.scale(a.data(), 1.7, r1.data(), n);
        v.scale(a.data(), 1.7, r2.data(), n);
        CHECK(r1 == r2);
        s.relu(a.data(), r1.data(), n);
        v.relu(a.data(), r2.data(), n);
        CHECK(r1 == r2);

        auto y1 = b, y2 = b;
        s.axpy(-0.3, a.data(), y1.data(), n);
        v.axpy(-0.3, a.data(), y2.data(), n);
        CHECK(y1 == y2);

        auto g1 = random_vec(n, rng);
        auto g2 = g1;
        s.relu_backward(a.data(), b.data(), g1.data(), n);
        v.relu_backward(a.data(), b.data(), g2.data(), n);
        CHECK(g1 == g2);
    }
}

TEST_CASE("reduction kernels agree across variants within accumulation tolerance") {
    if (!have_simd_variant()) return;
    const auto& s = kernels::scalar_ops();
    const auto& v = simd_variant();
    std::mt19937_64 rng(11);
    for (std::size_t n : {1u, 5u, 32u, 333u, 4096u}) {
        auto a = random_vec(n, rng), b = random_vec(n, rng);
        const double tol = 1e-12 * static_cast<double>(n);
        CHECK(std::abs(s.dot(a.data(), b.data(), n) - v.dot(a.data(), b.data(), n)) <= tol);
        CHECK(std::abs(s.sum(a.data(), n) - v.sum(a.data(), n)) <= tol);
        CHECK(std::abs(s.sumsq(a.data(), n) - v.sumsq(a.data(), n)) <= tol);
    }
}

TEST_CASE("gemm is bit-identical across variants and matches a naive triple loop") {
    if (!have_simd_variant()) return;
    const auto& s = kernels::scalar_ops();
    const auto& v = simd_variant();
    std::mt19937_64 rng(13);
    for (auto [m, n, k] : std::vector<std::array<std::size_t, 3>>{
             {1, 1, 1}, {3, 7, 5}, {8, 33, 16}, {5, 100, 9}}) {
        auto a = random_vec(m * k, rng);
        auto b = random_vec(k * n, rng);
        std::vector<double> c1(m * n, 0.5), c2(c1), c3(c1);
        s.gemm_accum(m, n, k, a.data(), b.data(), c1.data());
        v.gemm_accum(m, n, k, a.data(), b.data(), c2.data());
        CHECK(c1 == c2);
        // naive: per element, ascending-k accumulation
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double acc = c3[i * n + j];
                for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
                c3[i * n + j] = acc;
            }
        CHECK(c1 == c3);
    }
}
