#pragma once

// Shared helpers and independent oracles for the test suites. Everything in
// here recomputes from first principles: no calls into the implementation
// paths under test beyond basic Tensor storage.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "lls/tensor.hpp"

namespace lls::test {

inline Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
    return uniform(std::move(shape), lo, hi, rng);
}

// Naive 6-loop convolution, stride/pad semantics spelled out directly.
inline Tensor conv2d_oracle(const Tensor& input, const Tensor& kernel, int stride, int pad) {
    const int c_in = input.shape[0], h = input.shape[1], w = input.shape[2];
    const int c_out = kernel.shape[0], k = kernel.shape[2];
    const int h_out = (h + 2 * pad - k) / stride + 1;
    const int w_out = (w + 2 * pad - k) / stride + 1;
    Tensor out = zeros({c_out, h_out, w_out});
    for (int o = 0; o < c_out; ++o)
        for (int oy = 0; oy < h_out; ++oy)
            for (int ox = 0; ox < w_out; ++ox) {
                double acc = 0.0;
                for (int ci = 0; ci < c_in; ++ci)
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) {
                            const int iy = oy * stride + ky - pad;
                            const int ix = ox * stride + kx - pad;
                            double v = 0.0;
                            if (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                v = input.ptr()[(static_cast<std::size_t>(ci) * h + iy) * w + ix];
                            acc += v * kernel.ptr()[((static_cast<std::size_t>(o) * c_in + ci) * k +
                                                     ky) * k + kx];
                        }
                out.ptr()[(static_cast<std::size_t>(o) * h_out + oy) * w_out + ox] = acc;
            }
    return out;
}

// Per-location matrix product: out[l, loc] = sum_k W[k][l] * in[k][loc].
inline Tensor conv1x1_oracle(const Tensor& input, const Tensor& weights) {
    const int d = input.shape[0], h = input.shape[1], w = input.shape[2];
    const int c = weights.shape[1];
    Tensor out = zeros({c, h, w});
    const int locs = h * w;
    for (int l = 0; l < c; ++l)
        for (int loc = 0; loc < locs; ++loc) {
            double acc = 0.0;
            for (int k = 0; k < d; ++k)
                acc += weights.ptr()[k * c + l] * input.ptr()[static_cast<std::size_t>(k) * locs + loc];
            out.ptr()[static_cast<std::size_t>(l) * locs + loc] = acc;
        }
    return out;
}

// Exhaustive double-loop minimum matching over Frobenius-normalized maps.
inline double matching_oracle(const Tensor& x, const Tensor& p) {
    const int d = x.shape[0];
    const int locs = x.shape[1] * x.shape[2];
    auto normalize = [](const Tensor& t) {
        double s = 0.0;
        for (std::size_t i = 0; i < t.size(); ++i) s += t.ptr()[i] * t.ptr()[i];
        const double inv = 1.0 / std::sqrt(s);
        std::vector<double> out(t.size());
        for (std::size_t i = 0; i < t.size(); ++i) out[i] = t.ptr()[i] * inv;
        return out;
    };
    const std::vector<double> nx = normalize(x);
    const std::vector<double> np = normalize(p);
    double total = 0.0;
    for (int i = 0; i < locs; ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (int a = 0; a < locs; ++a) {
            double s = 0.0;
            for (int k = 0; k < d; ++k) {
                const double diff = nx[static_cast<std::size_t>(k) * locs + i] -
                                    np[static_cast<std::size_t>(k) * locs + a];
                s += diff * diff;
            }
            best = std::min(best, s);
        }
        total += best;
    }
    return total;
}

// Central finite differences of `loss_at()` with respect to the entries of
// `param`, compared against `analytic`; returns max relative error with an
// absolute floor so near-zero gradients do not blow up the ratio.
inline double finite_diff_max_rel_err(Tensor& param, const std::function<double()>& loss_at,
                                      const std::vector<double>& analytic, double step = 1e-5,
                                      double floor = 1e-6) {
    double max_err = 0.0;
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double orig = param.ptr()[i];
        param.ptr()[i] = orig + step;
        const double up = loss_at();
        param.ptr()[i] = orig - step;
        const double down = loss_at();
        param.ptr()[i] = orig;
        const double fd = (up - down) / (2.0 * step);
        const double denom = std::max({std::abs(fd), std::abs(analytic[i]), floor});
        max_err = std::max(max_err, std::abs(fd - analytic[i]) / denom);
    }
    return max_err;
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a.ptr()[i] != b.ptr()[i]) return false;
    return true;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.ptr()[i] - b.ptr()[i]));
    return m;
}

}  // namespace lls::test
