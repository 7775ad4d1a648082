#pragma once

// Low-level array kernels backing the tensor ops. Every kernel has a scalar
// reference implementation; on x86-64 an AVX2 variant is selected at runtime,
// on aarch64 a NEON variant. Elementwise kernels are bit-identical to the
// scalar reference (same per-element operations, FP contraction disabled).
// Reduction and GEMM kernels keep the k-accumulation order sequential so that
// naive-loop oracles match them exactly; only the lane-parallel n dimension is
// vectorized.

#include <cstddef>

namespace lls::kernels {

struct Ops {
    // out[i] = a[i] (+|-|*) b[i]
    void (*add)(const double* a, const double* b, double* out, std::size_t n);
    void (*sub)(const double* a, const double* b, double* out, std::size_t n);
    void (*mul)(const double* a, const double* b, double* out, std::size_t n);
    // out[i] = a[i] * alpha
    void (*scale)(const double* a, double alpha, double* out, std::size_t n);
    // y[i] += alpha * x[i]
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    // out[i] = max(a[i], 0)
    void (*relu)(const double* a, double* out, std::size_t n);
    // gx[i] += gy[i] where y[i] > 0
    void (*relu_backward)(const double* y, const double* gy, double* gx, std::size_t n);
    double (*dot)(const double* a, const double* b, std::size_t n);
    double (*sum)(const double* a, std::size_t n);
    double (*sumsq)(const double* a, std::size_t n);
    // Row-major C[MxN] += A[MxK] * B[KxN]
    void (*gemm_accum)(std::size_t m, std::size_t n, std::size_t k,
                       const double* a, const double* b, double* c);
};

const Ops& scalar_ops();

// Best variant the running CPU supports (honors LLS_FORCE_SCALAR=1).
const Ops& active();
const char* active_name();

// Test hook: override dispatch. Pass nullptr to restore auto-detection.
void set_active(const Ops* ops, const char* name);

#if defined(__x86_64__)
bool cpu_has_avx2();
const Ops& avx2_ops();
#endif
#if defined(__aarch64__)
const Ops& neon_ops();
#endif

}  // namespace lls::kernels
