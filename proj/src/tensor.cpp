#include "lls/tensor.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <string>

#include "lls/kernels.hpp"

namespace lls {

namespace {
const kernels::Ops& K() { return kernels::active(); }

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape != b.shape) throw ShapeMismatch(std::string(what) + ": operand shapes differ");
}

// Ensures a grad buffer of the right size exists and returns it.
double* grad_of(Tensor& t) { return t.grad_ptr(); }

Tensor make_like(const std::vector<int>& shape) { return zeros(shape); }

}  // namespace

std::size_t shape_product(const std::vector<int>& shape) {
    std::size_t p = 1;
    for (int e : shape) {
        if (e <= 0) throw ShapeMismatch("non-positive extent");
        p *= static_cast<std::size_t>(e);
    }
    return p;
}

Tensor::Tensor(std::vector<int> shape_, std::vector<double> values) {
    if (shape_product(shape_) != values.size())
        throw ShapeMismatch("value count does not match shape");
    shape = std::move(shape_);
    data = std::make_shared<std::vector<double>>(std::move(values));
    grad = std::make_shared<std::vector<double>>();
}

double* Tensor::grad_ptr() {
    if (!grad) grad = std::make_shared<std::vector<double>>();
    if (grad->size() != size()) grad->assign(size(), 0.0);
    return grad->data();
}

double Tensor::scalar() const {
    if (size() != 1) throw ShapeMismatch("scalar() on non-scalar tensor");
    return (*data)[0];
}

bool Tensor::all_finite() const {
    for (double v : *data)
        if (!std::isfinite(v)) return false;
    return true;
}

void Tensor::clear_grad() {
    if (grad && !grad->empty()) std::fill(grad->begin(), grad->end(), 0.0);
}

Tensor zeros(std::vector<int> shape) {
    std::size_t n = shape_product(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor full(std::vector<int> shape, double value) {
    std::size_t n = shape_product(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor uniform(std::vector<int> shape, double lo, double hi, std::mt19937_64& rng) {
    std::size_t n = shape_product(shape);
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = dist(rng);
    return Tensor(std::move(shape), std::move(v));
}

int Tape::record(std::function<void()> backward,
                 std::vector<std::shared_ptr<std::vector<double>>> out_grads) {
    nodes_.push_back({std::move(backward), std::move(out_grads)});
    return static_cast<int>(nodes_.size()) - 1;
}

void Tape::backward(Tensor& loss) {
    if (loss.tape != this || loss.node < 0)
        throw DetachedTensor("backward: loss was not produced on this tape");
    if (loss.size() != 1) throw ShapeMismatch("backward: loss must be scalar");
    for (auto& node : nodes_)
        for (auto& g : node.out_grads)
            if (g && !g->empty()) std::fill(g->begin(), g->end(), 0.0);
    loss.grad_ptr()[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

namespace {

template <typename Fwd, typename Bwd>
Tensor binary_op(Tape* tape, const Tensor& a, const Tensor& b, const char* what, Fwd fwd,
                 Bwd bwd) {
    check_same_shape(a, b, what);
    Tensor out = make_like(a.shape);
    fwd(a.ptr(), b.ptr(), out.ptr(), a.size());
    if (tape) {
        out.tape = tape;
        Tensor ac = a, bc = b, oc = out;
        out.node = tape->record([ac, bc, oc, bwd]() mutable { bwd(ac, bc, oc); }, {out.grad});
    }
    return out;
}

}  // namespace

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
    return binary_op(
        tape, a, b, "add", [](const double* x, const double* y, double* o, std::size_t n) {
            K().add(x, y, o, n);
        },
        [](Tensor& ac, Tensor& bc, Tensor& oc) {
            K().axpy(1.0, oc.grad_ptr(), grad_of(ac), ac.size());
            K().axpy(1.0, oc.grad_ptr(), grad_of(bc), bc.size());
        });
}

Tensor sub(Tape* tape, const Tensor& a, const Tensor& b) {
    return binary_op(
        tape, a, b, "sub", [](const double* x, const double* y, double* o, std::size_t n) {
            K().sub(x, y, o, n);
        },
        [](Tensor& ac, Tensor& bc, Tensor& oc) {
            K().axpy(1.0, oc.grad_ptr(), grad_of(ac), ac.size());
            K().axpy(-1.0, oc.grad_ptr(), grad_of(bc), bc.size());
        });
}

Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
    return binary_op(
        tape, a, b, "mul", [](const double* x, const double* y, double* o, std::size_t n) {
            K().mul(x, y, o, n);
        },
        [](Tensor& ac, Tensor& bc, Tensor& oc) {
            const double* g = oc.grad_ptr();
            double* ga = grad_of(ac);
            double* gb = grad_of(bc);
            const double* av = ac.ptr();
            const double* bv = bc.ptr();
            for (std::size_t i = 0; i < ac.size(); ++i) {
                ga[i] += g[i] * bv[i];
                gb[i] += g[i] * av[i];
            }
        });
}

Tensor scale(Tape* tape, const Tensor& a, double alpha) {
    Tensor out = make_like(a.shape);
    K().scale(a.ptr(), alpha, out.ptr(), a.size());
    if (tape) {
        out.tape = tape;
        Tensor ac = a, oc = out;
        out.node = tape->record(
            [ac, oc, alpha]() mutable { K().axpy(alpha, oc.grad_ptr(), grad_of(ac), ac.size()); },
            {out.grad});
    }
    return out;
}

Tensor relu(Tape* tape, const Tensor& a) {
    Tensor out = make_like(a.shape);
    K().relu(a.ptr(), out.ptr(), a.size());
    if (tape) {
        out.tape = tape;
        Tensor ac = a, oc = out;
        out.node = tape->record(
            [ac, oc]() mutable {
                K().relu_backward(oc.ptr(), oc.grad_ptr(), grad_of(ac), ac.size());
            },
            {out.grad});
    }
    return out;
}

Tensor elementwise(Tape* tape, ElementwiseKind kind, const Tensor& a, const Tensor& b) {
    switch (kind) {
        case ElementwiseKind::add: return add(tape, a, b);
        case ElementwiseKind::sub: return sub(tape, a, b);
        case ElementwiseKind::mul: return mul(tape, a, b);
        default: break;
    }
    throw ShapeMismatch("elementwise: kind requires a scalar or unary operand");
}

Tensor elementwise(Tape* tape, ElementwiseKind kind, const Tensor& a, double b) {
    switch (kind) {
        case ElementwiseKind::add: {
            Tensor ones = full(a.shape, b);
            return add(tape, a, ones);
        }
        case ElementwiseKind::sub: {
            Tensor ones = full(a.shape, b);
            return sub(tape, a, ones);
        }
        case ElementwiseKind::mul:
        case ElementwiseKind::scale: return scale(tape, a, b);
        case ElementwiseKind::relu: return relu(tape, a);
    }
    throw ShapeMismatch("elementwise: unknown kind");
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

namespace {

// im2col for c_in×h×w input, kxk kernel. Column layout: row index
// (ci*k + ky)*k + kx (ascending, matching a naive ci/ky/kx accumulation
// order), column index oy*w_out + ox. Out-of-bounds taps are zero.
void im2col(const double* in, int c_in, int h, int w, int k, int stride, int pad, int h_out,
            int w_out, double* col) {
    const int locs = h_out * w_out;
    for (int ci = 0; ci < c_in; ++ci) {
        const double* chan = in + static_cast<std::size_t>(ci) * h * w;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                double* row = col + static_cast<std::size_t>((ci * k + ky) * k + kx) * locs;
                for (int oy = 0; oy < h_out; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    double* dst = row + oy * w_out;
                    if (iy < 0 || iy >= h) {
                        std::memset(dst, 0, sizeof(double) * w_out);
                        continue;
                    }
                    const double* src = chan + iy * w;
                    for (int ox = 0; ox < w_out; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        dst[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_accum(const double* col, int c_in, int h, int w, int k, int stride, int pad,
                  int h_out, int w_out, double* gin) {
    const int locs = h_out * w_out;
    for (int ci = 0; ci < c_in; ++ci) {
        double* chan = gin + static_cast<std::size_t>(ci) * h * w;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const double* row = col + static_cast<std::size_t>((ci * k + ky) * k + kx) * locs;
                for (int oy = 0; oy < h_out; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < w_out; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        if (ix >= 0 && ix < w) chan[iy * w + ix] += row[oy * w_out + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(Tape* tape, const Tensor& input, const Tensor& kernel, int stride, int pad) {
    if (input.shape.size() != 3 || kernel.shape.size() != 4)
        throw ShapeMismatch("conv2d: expected c_in×h×w input and c_out×c_in×k×k kernel");
    const int c_in = input.shape[0], h = input.shape[1], w = input.shape[2];
    const int c_out = kernel.shape[0], k = kernel.shape[2];
    if (kernel.shape[1] != c_in) throw ShapeMismatch("conv2d: channel disagreement");
    if (kernel.shape[3] != k) throw ShapeMismatch("conv2d: non-square kernel");
    if (stride < 1) throw ShapeMismatch("conv2d: stride must be >= 1");
    if (k > h + 2 * pad || k > w + 2 * pad) throw ShapeMismatch("conv2d: kernel larger than input");
    const int h_out = (h + 2 * pad - k) / stride + 1;
    const int w_out = (w + 2 * pad - k) / stride + 1;
    const int kdim = c_in * k * k;
    const int locs = h_out * w_out;

    auto col = std::make_shared<std::vector<double>>(static_cast<std::size_t>(kdim) * locs);
    im2col(input.ptr(), c_in, h, w, k, stride, pad, h_out, w_out, col->data());

    Tensor out = zeros({c_out, h_out, w_out});
    K().gemm_accum(c_out, locs, kdim, kernel.ptr(), col->data(), out.ptr());

    if (tape) {
        out.tape = tape;
        Tensor in_c = input, ker_c = kernel, out_c = out;
        out.node = tape->record(
            [in_c, ker_c, out_c, col, c_in, h, w, k, stride, pad, h_out, w_out, c_out, kdim,
             locs]() mutable {
                const double* gout = out_c.grad_ptr();
                // dKernel[o][kd] = <gout row o, col row kd>
                double* gk = grad_of(ker_c);
                for (int o = 0; o < c_out; ++o)
                    for (int kd = 0; kd < kdim; ++kd)
                        gk[o * kdim + kd] += K().dot(gout + static_cast<std::size_t>(o) * locs,
                                                     col->data() + static_cast<std::size_t>(kd) * locs,
                                                     locs);
                // dCol = kernelT * gout, then scatter back
                std::vector<double> ker_t(static_cast<std::size_t>(kdim) * c_out);
                const double* kv = ker_c.ptr();
                for (int o = 0; o < c_out; ++o)
                    for (int kd = 0; kd < kdim; ++kd) ker_t[kd * c_out + o] = kv[o * kdim + kd];
                std::vector<double> gcol(static_cast<std::size_t>(kdim) * locs, 0.0);
                K().gemm_accum(kdim, locs, c_out, ker_t.data(), gout, gcol.data());
                col2im_accum(gcol.data(), c_in, h, w, k, stride, pad, h_out, w_out,
                             grad_of(in_c));
            },
            {out.grad});
    }
    return out;
}

Tensor conv1x1(Tape* tape, const Tensor& input, const Tensor& weights) {
    if (input.shape.size() != 3 || weights.shape.size() != 2)
        throw ShapeMismatch("conv1x1: expected d×h×w input and d×c weights");
    const int d = input.shape[0], h = input.shape[1], w = input.shape[2];
    const int c = weights.shape[1];
    if (weights.shape[0] != d) throw ShapeMismatch("conv1x1: channel disagreement");
    const int locs = h * w;

    // out = W^T * input as a c×locs by d×locs product
    std::vector<double> wt(static_cast<std::size_t>(c) * d);
    const double* wv = weights.ptr();
    for (int kk = 0; kk < d; ++kk)
        for (int l = 0; l < c; ++l) wt[static_cast<std::size_t>(l) * d + kk] = wv[kk * c + l];

    Tensor out = zeros({c, h, w});
    K().gemm_accum(c, locs, d, wt.data(), input.ptr(), out.ptr());

    if (tape) {
        out.tape = tape;
        Tensor in_c = input, w_c = weights, out_c = out;
        out.node = tape->record(
            [in_c, w_c, out_c, d, c, locs]() mutable {
                const double* gout = out_c.grad_ptr();
                double* gw = grad_of(w_c);
                for (int kk = 0; kk < d; ++kk)
                    for (int l = 0; l < c; ++l)
                        gw[kk * c + l] += K().dot(in_c.ptr() + static_cast<std::size_t>(kk) * locs,
                                                  gout + static_cast<std::size_t>(l) * locs, locs);
                // gIn = W * gout
                K().gemm_accum(d, locs, c, w_c.ptr(), gout, grad_of(in_c));
            },
            {out.grad});
    }
    return out;
}

Tensor global_avg_pool(Tape* tape, const Tensor& input) {
    if (input.shape.size() != 3) throw ShapeMismatch("global_avg_pool: expected d×h×w");
    const int d = input.shape[0];
    const std::size_t locs = static_cast<std::size_t>(input.shape[1]) * input.shape[2];
    Tensor out = zeros({d});
    const double inv = 1.0 / static_cast<double>(locs);
    for (int kk = 0; kk < d; ++kk)
        out.ptr()[kk] = K().sum(input.ptr() + kk * locs, locs) * inv;
    if (tape) {
        out.tape = tape;
        Tensor in_c = input, out_c = out;
        out.node = tape->record(
            [in_c, out_c, d, locs, inv]() mutable {
                const double* g = out_c.grad_ptr();
                double* gi = grad_of(in_c);
                for (int kk = 0; kk < d; ++kk) {
                    const double gv = g[kk] * inv;
                    double* row = gi + kk * locs;
                    for (std::size_t i = 0; i < locs; ++i) row[i] += gv;
                }
            },
            {out.grad});
    }
    return out;
}

Tensor avg_pool2x2(Tape* tape, const Tensor& input) {
    if (input.shape.size() != 3) throw ShapeMismatch("avg_pool2x2: expected c×h×w");
    const int c = input.shape[0], h = input.shape[1], w = input.shape[2];
    if (h % 2 != 0 || w % 2 != 0) throw ShapeMismatch("avg_pool2x2: odd spatial extent");
    const int ho = h / 2, wo = w / 2;
    Tensor out = zeros({c, ho, wo});
    const double* in = input.ptr();
    double* o = out.ptr();
    for (int ch = 0; ch < c; ++ch)
        for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox) {
                const double* base = in + (static_cast<std::size_t>(ch) * h + 2 * oy) * w + 2 * ox;
                o[(static_cast<std::size_t>(ch) * ho + oy) * wo + ox] =
                    (base[0] + base[1] + base[w] + base[w + 1]) * 0.25;
            }
    if (tape) {
        out.tape = tape;
        Tensor in_c = input, out_c = out;
        out.node = tape->record(
            [in_c, out_c, c, h, w, ho, wo]() mutable {
                const double* g = out_c.grad_ptr();
                double* gi = grad_of(in_c);
                for (int ch = 0; ch < c; ++ch)
                    for (int oy = 0; oy < ho; ++oy)
                        for (int ox = 0; ox < wo; ++ox) {
                            const double gv =
                                g[(static_cast<std::size_t>(ch) * ho + oy) * wo + ox] * 0.25;
                            double* base =
                                gi + (static_cast<std::size_t>(ch) * h + 2 * oy) * w + 2 * ox;
                            base[0] += gv;
                            base[1] += gv;
                            base[w] += gv;
                            base[w + 1] += gv;
                        }
            },
            {out.grad});
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions / normalization
// ---------------------------------------------------------------------------

Tensor softmax(Tape* tape, const Tensor& logits) {
    if (logits.shape.empty()) throw ShapeMismatch("softmax: empty shape");
    if (!logits.all_finite()) throw NonFinite("softmax: non-finite logits");
    const int n = logits.shape.back();
    const std::size_t rows = logits.size() / n;
    Tensor out = make_like(logits.shape);
    const double* x = logits.ptr();
    double* y = out.ptr();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x + r * n;
        double* yr = y + r * n;
        double m = xr[0];
        for (int i = 1; i < n; ++i) m = std::max(m, xr[i]);
        double z = 0.0;
        for (int i = 0; i < n; ++i) {
            yr[i] = std::exp(xr[i] - m);
            z += yr[i];
        }
        const double inv = 1.0 / z;
        for (int i = 0; i < n; ++i) yr[i] *= inv;
    }
    if (tape) {
        out.tape = tape;
        Tensor in_c = logits, out_c = out;
        out.node = tape->record(
            [in_c, out_c, n, rows]() mutable {
                const double* g = out_c.grad_ptr();
                const double* y = out_c.ptr();
                double* gx = grad_of(in_c);
                for (std::size_t r = 0; r < rows; ++r) {
                    const double* gr = g + r * n;
                    const double* yr = y + r * n;
                    double dotgy = 0.0;
                    for (int i = 0; i < n; ++i) dotgy += gr[i] * yr[i];
                    double* gxr = gx + r * n;
                    for (int i = 0; i < n; ++i) gxr[i] += (gr[i] - dotgy) * yr[i];
                }
            },
            {out.grad});
    }
    return out;
}

Tensor channel_softmax(Tape* tape, const Tensor& logits) {
    if (logits.shape.size() != 3) throw ShapeMismatch("channel_softmax: expected c×h×w");
    if (!logits.all_finite()) throw NonFinite("channel_softmax: non-finite logits");
    const int c = logits.shape[0];
    const std::size_t locs = static_cast<std::size_t>(logits.shape[1]) * logits.shape[2];
    Tensor out = make_like(logits.shape);
    const double* x = logits.ptr();
    double* y = out.ptr();
    for (std::size_t loc = 0; loc < locs; ++loc) {
        double m = x[loc];
        for (int l = 1; l < c; ++l) m = std::max(m, x[l * locs + loc]);
        double z = 0.0;
        for (int l = 0; l < c; ++l) {
            y[l * locs + loc] = std::exp(x[l * locs + loc] - m);
            z += y[l * locs + loc];
        }
        const double inv = 1.0 / z;
        for (int l = 0; l < c; ++l) y[l * locs + loc] *= inv;
    }
    if (tape) {
        out.tape = tape;
        Tensor in_c = logits, out_c = out;
        out.node = tape->record(
            [in_c, out_c, c, locs]() mutable {
                const double* g = out_c.grad_ptr();
                const double* y = out_c.ptr();
                double* gx = grad_of(in_c);
                for (std::size_t loc = 0; loc < locs; ++loc) {
                    double dotgy = 0.0;
                    for (int l = 0; l < c; ++l) dotgy += g[l * locs + loc] * y[l * locs + loc];
                    for (int l = 0; l < c; ++l)
                        gx[l * locs + loc] += (g[l * locs + loc] - dotgy) * y[l * locs + loc];
                }
            },
            {out.grad});
    }
    return out;
}

Tensor sum(Tape* tape, const Tensor& a) {
    Tensor out({1}, {K().sum(a.ptr(), a.size())});
    if (tape) {
        out.tape = tape;
        Tensor ac = a, oc = out;
        out.node = tape->record(
            [ac, oc]() mutable {
                const double g = oc.grad_ptr()[0];
                double* ga = grad_of(ac);
                for (std::size_t i = 0; i < ac.size(); ++i) ga[i] += g;
            },
            {out.grad});
    }
    return out;
}

Tensor sumsq(Tape* tape, const Tensor& a) {
    Tensor out({1}, {K().sumsq(a.ptr(), a.size())});
    if (tape) {
        out.tape = tape;
        Tensor ac = a, oc = out;
        out.node = tape->record(
            [ac, oc]() mutable {
                K().axpy(2.0 * oc.grad_ptr()[0], ac.ptr(), grad_of(ac), ac.size());
            },
            {out.grad});
    }
    return out;
}

Tensor frobenius_normalize(Tape* tape, const Tensor& x) {
    // sequential accumulation: the norm must not depend on the SIMD variant
    double ss = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) ss += x.ptr()[i] * x.ptr()[i];
    const double nrm = std::sqrt(ss);
    if (nrm < 1e-12) throw ZeroMap("frobenius_normalize: vanishing norm");
    Tensor out = make_like(x.shape);
    K().scale(x.ptr(), 1.0 / nrm, out.ptr(), x.size());
    if (tape) {
        out.tape = tape;
        Tensor in_c = x, out_c = out;
        out.node = tape->record(
            [in_c, out_c, nrm]() mutable {
                const double* g = out_c.grad_ptr();
                const double* y = out_c.ptr();
                const double gy = K().dot(g, y, out_c.size());
                double* gx = grad_of(in_c);
                const double inv = 1.0 / nrm;
                for (std::size_t i = 0; i < in_c.size(); ++i)
                    gx[i] += (g[i] - gy * y[i]) * inv;
            },
            {out.grad});
    }
    return out;
}

Tensor location_norms(Tape* tape, const Tensor& fmap) {
    if (fmap.shape.size() != 3) throw ShapeMismatch("location_norms: expected d×h×w");
    const int d = fmap.shape[0];
    const int locs = fmap.shape[1] * fmap.shape[2];
    Tensor out = zeros({locs});
    const double* x = fmap.ptr();
    double* y = out.ptr();
    for (int loc = 0; loc < locs; ++loc) {
        double s = 0.0;
        for (int kk = 0; kk < d; ++kk) {
            const double v = x[static_cast<std::size_t>(kk) * locs + loc];
            s += v * v;
        }
        y[loc] = std::sqrt(s);
    }
    if (tape) {
        out.tape = tape;
        Tensor in_c = fmap, out_c = out;
        out.node = tape->record(
            [in_c, out_c, d, locs]() mutable {
                const double* g = out_c.grad_ptr();
                const double* y = out_c.ptr();
                const double* x = in_c.ptr();
                double* gx = grad_of(in_c);
                for (int loc = 0; loc < locs; ++loc) {
                    if (y[loc] <= 0.0) continue;  // subgradient 0 at zero locations
                    const double gv = g[loc] / y[loc];
                    for (int kk = 0; kk < d; ++kk)
                        gx[static_cast<std::size_t>(kk) * locs + loc] +=
                            gv * x[static_cast<std::size_t>(kk) * locs + loc];
                }
            },
            {out.grad});
    }
    return out;
}

Tensor variance(Tape* tape, const Tensor& v) {
    const std::size_t n = v.size();
    if (n < 2) throw DegenerateMap("variance: needs at least two entries");
    const double mean = K().sum(v.ptr(), n) / static_cast<double>(n);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dlt = v.ptr()[i] - mean;
        acc += dlt * dlt;
    }
    Tensor out({1}, {acc / static_cast<double>(n)});
    if (tape) {
        out.tape = tape;
        Tensor in_c = v, out_c = out;
        out.node = tape->record(
            [in_c, out_c, mean, n]() mutable {
                const double g = out_c.grad_ptr()[0] * 2.0 / static_cast<double>(n);
                double* gx = grad_of(in_c);
                for (std::size_t i = 0; i < n; ++i) gx[i] += g * (in_c.ptr()[i] - mean);
            },
            {out.grad});
    }
    return out;
}

Tensor stack_scalars(Tape* tape, const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeMismatch("stack_scalars: empty input");
    const int n = static_cast<int>(parts.size());
    Tensor out = zeros({n});
    for (int i = 0; i < n; ++i) out.ptr()[i] = parts[i].scalar();
    if (tape) {
        out.tape = tape;
        std::vector<Tensor> pc = parts;
        Tensor oc = out;
        out.node = tape->record(
            [pc, oc]() mutable {
                const double* g = oc.grad_ptr();
                for (std::size_t i = 0; i < pc.size(); ++i) pc[i].grad_ptr()[0] += g[i];
            },
            {out.grad});
    }
    return out;
}

Tensor cross_entropy_logits(Tape* tape, const Tensor& logits, int label) {
    if (logits.shape.size() != 1) throw ShapeMismatch("cross_entropy_logits: expected 1-D");
    const int n = logits.shape[0];
    if (label < 0 || label >= n) throw LabelOutOfRange("cross_entropy_logits: bad label");
    const double* x = logits.ptr();
    double m = x[0];
    for (int i = 1; i < n; ++i) m = std::max(m, x[i]);
    double z = 0.0;
    for (int i = 0; i < n; ++i) z += std::exp(x[i] - m);
    Tensor out({1}, {m + std::log(z) - x[label]});
    if (tape) {
        out.tape = tape;
        Tensor in_c = logits, out_c = out;
        out.node = tape->record(
            [in_c, out_c, label, n, m, z]() mutable {
                const double g = out_c.grad_ptr()[0];
                double* gx = grad_of(in_c);
                const double* x = in_c.ptr();
                for (int i = 0; i < n; ++i) {
                    double p = std::exp(x[i] - m) / z;
                    gx[i] += g * (p - (i == label ? 1.0 : 0.0));
                }
            },
            {out.grad});
    }
    return out;
}

Tensor spatial_cross_entropy(Tape* tape, const Tensor& logits, int label) {
    if (logits.shape.size() != 3) throw ShapeMismatch("spatial_cross_entropy: expected c×h×w");
    const int c = logits.shape[0];
    const int locs = logits.shape[1] * logits.shape[2];
    if (label < 0 || label >= c) throw LabelOutOfRange("spatial_cross_entropy: bad label");
    const double* x = logits.ptr();
    double total = 0.0;
    for (int loc = 0; loc < locs; ++loc) {
        double m = x[loc];
        for (int l = 1; l < c; ++l)
            m = std::max(m, x[static_cast<std::size_t>(l) * locs + loc]);
        double z = 0.0;
        for (int l = 0; l < c; ++l)
            z += std::exp(x[static_cast<std::size_t>(l) * locs + loc] - m);
        total += m + std::log(z) - x[static_cast<std::size_t>(label) * locs + loc];
    }
    Tensor out({1}, {total});
    if (tape) {
        out.tape = tape;
        Tensor in_c = logits, out_c = out;
        out.node = tape->record(
            [in_c, out_c, label, c, locs]() mutable {
                const double g = out_c.grad_ptr()[0];
                double* gx = grad_of(in_c);
                const double* x = in_c.ptr();
                for (int loc = 0; loc < locs; ++loc) {
                    double m = x[loc];
                    for (int l = 1; l < c; ++l)
                        m = std::max(m, x[static_cast<std::size_t>(l) * locs + loc]);
                    double z = 0.0;
                    for (int l = 0; l < c; ++l)
                        z += std::exp(x[static_cast<std::size_t>(l) * locs + loc] - m);
                    for (int l = 0; l < c; ++l) {
                        const std::size_t idx = static_cast<std::size_t>(l) * locs + loc;
                        const double p = std::exp(x[idx] - m) / z;
                        gx[idx] += g * (p - (l == label ? 1.0 : 0.0));
                    }
                }
            },
            {out.grad});
    }
    return out;
}

Tensor min_matching(Tape* tape, const Tensor& nx, const Tensor& np) {
    check_same_shape(nx, np, "min_matching");
    if (nx.shape.size() != 3) throw ShapeMismatch("min_matching: expected d×h×w");
    const int d = nx.shape[0];
    const int locs = nx.shape[1] * nx.shape[2];
    const double* xv = nx.ptr();
    const double* pv = np.ptr();
    auto argmin = std::make_shared<std::vector<int>>(locs);
    double total = 0.0;
    for (int i = 0; i < locs; ++i) {
        double best = std::numeric_limits<double>::infinity();
        int best_a = 0;
        for (int a = 0; a < locs; ++a) {
            double s = 0.0;
            for (int kk = 0; kk < d; ++kk) {
                const double diff = xv[static_cast<std::size_t>(kk) * locs + i] -
                                    pv[static_cast<std::size_t>(kk) * locs + a];
                s += diff * diff;
            }
            if (s < best) {
                best = s;
                best_a = a;
            }
        }
        (*argmin)[i] = best_a;
        total += best;
    }
    Tensor out({1}, {total});
    if (tape) {
        out.tape = tape;
        Tensor x_c = nx, p_c = np, out_c = out;
        out.node = tape->record(
            [x_c, p_c, out_c, argmin, d, locs]() mutable {
                const double g = out_c.grad_ptr()[0];
                double* gx = grad_of(x_c);
                double* gp = grad_of(p_c);
                const double* xv = x_c.ptr();
                const double* pv = p_c.ptr();
                for (int i = 0; i < locs; ++i) {
                    const int a = (*argmin)[i];
                    for (int kk = 0; kk < d; ++kk) {
                        const std::size_t xi = static_cast<std::size_t>(kk) * locs + i;
                        const std::size_t pa = static_cast<std::size_t>(kk) * locs + a;
                        const double diff = xv[xi] - pv[pa];
                        gx[xi] += 2.0 * g * diff;
                        gp[pa] -= 2.0 * g * diff;
                    }
                }
            },
            {out.grad});
    }
    return out;
}

std::vector<Tensor> batch_channel_norm(Tape* tape, const std::vector<Tensor>& xs,
                                       const Tensor& gamma, const Tensor& beta,
                                       std::vector<double>& running_mean,
                                       std::vector<double>& running_var, bool training,
                                       double momentum, double eps) {
    if (xs.empty()) throw ShapeMismatch("batch_channel_norm: empty batch");
    const int c = xs[0].shape[0];
    const std::size_t locs = static_cast<std::size_t>(xs[0].shape[1]) * xs[0].shape[2];
    for (const auto& x : xs) check_same_shape(x, xs[0], "batch_channel_norm");
    if (gamma.shape != std::vector<int>{c} || beta.shape != std::vector<int>{c})
        throw ShapeMismatch("batch_channel_norm: gamma/beta shape");
    if (static_cast<int>(running_mean.size()) != c || static_cast<int>(running_var.size()) != c)
        throw ShapeMismatch("batch_channel_norm: running stat size");

    const std::size_t batch = xs.size();
    const double n = static_cast<double>(batch * locs);
    auto mean = std::make_shared<std::vector<double>>(c, 0.0);
    auto inv_std = std::make_shared<std::vector<double>>(c, 0.0);

    if (training) {
        for (int ch = 0; ch < c; ++ch) {
            double m = 0.0;
            for (const auto& x : xs) m += K().sum(x.ptr() + ch * locs, locs);
            m /= n;
            double v = 0.0;
            for (const auto& x : xs) {
                const double* row = x.ptr() + ch * locs;
                for (std::size_t i = 0; i < locs; ++i) {
                    const double dlt = row[i] - m;
                    v += dlt * dlt;
                }
            }
            v /= n;
            (*mean)[ch] = m;
            (*inv_std)[ch] = 1.0 / std::sqrt(v + eps);
            running_mean[ch] = (1.0 - momentum) * running_mean[ch] + momentum * m;
            running_var[ch] = (1.0 - momentum) * running_var[ch] + momentum * v;
        }
    } else {
        for (int ch = 0; ch < c; ++ch) {
            (*mean)[ch] = running_mean[ch];
            (*inv_std)[ch] = 1.0 / std::sqrt(running_var[ch] + eps);
        }
    }

    std::vector<Tensor> ys;
    ys.reserve(batch);
    const double* gv = gamma.ptr();
    const double* bv = beta.ptr();
    for (const auto& x : xs) {
        Tensor y = make_like(x.shape);
        for (int ch = 0; ch < c; ++ch) {
            const double* xr = x.ptr() + ch * locs;
            double* yr = y.ptr() + ch * locs;
            const double m = (*mean)[ch], is = (*inv_std)[ch];
            const double a = gv[ch] * is, b = bv[ch] - gv[ch] * is * m;
            for (std::size_t i = 0; i < locs; ++i) yr[i] = a * xr[i] + b;
        }
        ys.push_back(std::move(y));
    }

    if (tape) {
        std::vector<Tensor> xs_c = xs, ys_c = ys;
        Tensor gamma_c = gamma, beta_c = beta;
        std::vector<std::shared_ptr<std::vector<double>>> out_grads;
        for (auto& y : ys_c) out_grads.push_back(y.grad);
        const bool train_mode = training;
        int node = tape->record(
            [xs_c, ys_c, gamma_c, beta_c, mean, inv_std, c, locs, n, train_mode]() mutable {
                const double* gv = gamma_c.ptr();
                double* ggamma = grad_of(gamma_c);
                double* gbeta = grad_of(beta_c);
                for (int ch = 0; ch < c; ++ch) {
                    const double m = (*mean)[ch], is = (*inv_std)[ch];
                    // channel-level reductions over the whole batch
                    double sum_g = 0.0, sum_gxhat = 0.0;
                    for (std::size_t bi = 0; bi < xs_c.size(); ++bi) {
                        const double* g = ys_c[bi].grad_ptr() + ch * locs;
                        const double* xr = xs_c[bi].ptr() + ch * locs;
                        for (std::size_t i = 0; i < locs; ++i) {
                            sum_g += g[i];
                            sum_gxhat += g[i] * (xr[i] - m) * is;
                        }
                    }
                    ggamma[ch] += sum_gxhat;
                    gbeta[ch] += sum_g;
                    const double mg = sum_g / n;
                    const double mgx = sum_gxhat / n;
                    for (std::size_t bi = 0; bi < xs_c.size(); ++bi) {
                        const double* g = ys_c[bi].grad_ptr() + ch * locs;
                        const double* xr = xs_c[bi].ptr() + ch * locs;
                        double* gx = grad_of(xs_c[bi]) + ch * locs;
                        if (train_mode) {
                            for (std::size_t i = 0; i < locs; ++i) {
                                const double xhat = (xr[i] - m) * is;
                                gx[i] += gv[ch] * is * (g[i] - mg - xhat * mgx);
                            }
                        } else {
                            for (std::size_t i = 0; i < locs; ++i) gx[i] += gv[ch] * is * g[i];
                        }
                    }
                }
            },
            std::move(out_grads));
        for (auto& y : ys) {
            y.tape = tape;
            y.node = node;
        }
    }
    return ys;
}

}  // namespace lls
