#include "lls/metric.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace lls {

std::vector<Prototype> compute_prototypes(Tape* tape,
                                          const std::vector<std::pair<Tensor, int>>& supports,
                                          int num_classes) {
    if (supports.empty()) throw EmptyClass("compute_prototypes: no supports");
    for (const auto& [fmap, label] : supports)
        if (fmap.shape != supports[0].first.shape)
            throw ShapeMismatch("compute_prototypes: inconsistent map shapes");
    std::vector<Prototype> protos;
    protos.reserve(num_classes);
    for (int c = 0; c < num_classes; ++c) {
        std::vector<Tensor> members;
        for (const auto& [fmap, label] : supports)
            if (label == c) members.push_back(fmap);
        if (members.empty())
            throw EmptyClass("compute_prototypes: class " + std::to_string(c) + " has no support");
        if (members.size() == 1) {
            protos.push_back({members[0], c});
            continue;
        }
        // Per-element summation in sorted value order makes the mean
        // bit-exact under any permutation of the support list.
        const std::size_t n = members[0].size();
        const double inv = 1.0 / static_cast<double>(members.size());
        Tensor out = zeros(members[0].shape);
        std::vector<double> vals(members.size());
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t m = 0; m < members.size(); ++m) vals[m] = members[m].ptr()[i];
            std::sort(vals.begin(), vals.end());
            double acc = 0.0;
            for (double v : vals) acc += v;
            out.ptr()[i] = acc * inv;
        }
        if (tape) {
            out.tape = tape;
            std::vector<Tensor> mc = members;
            Tensor oc = out;
            out.node = tape->record(
                [mc, oc, inv]() mutable {
                    const double* g = oc.grad_ptr();
                    for (auto& m : mc) {
                        double* gm = m.grad_ptr();
                        for (std::size_t i = 0; i < m.size(); ++i) gm[i] += g[i] * inv;
                    }
                },
                {out.grad});
        }
        protos.push_back({out, c});
    }
    return protos;
}

Tensor normalize_map(Tape* tape, const Tensor& x) { return frobenius_normalize(tape, x); }

Tensor normalize_per_location(Tape* tape, const Tensor& x) {
    if (x.shape.size() != 3) throw ShapeMismatch("normalize_per_location: expected d×h×w");
    Tensor norms = location_norms(tape, x);
    for (std::size_t i = 0; i < norms.size(); ++i)
        if (norms.ptr()[i] < 1e-12) throw ZeroMap("normalize_per_location: zero location");
    const int d = x.shape[0];
    const int locs = x.shape[1] * x.shape[2];
    Tensor out = zeros(x.shape);
    for (int loc = 0; loc < locs; ++loc) {
        const double inv = 1.0 / norms.ptr()[loc];
        for (int k = 0; k < d; ++k)
            out.ptr()[static_cast<std::size_t>(k) * locs + loc] =
                x.ptr()[static_cast<std::size_t>(k) * locs + loc] * inv;
    }
    if (tape) {
        out.tape = tape;
        Tensor in_c = x, out_c = out, norms_c = norms;
        out.node = tape->record(
            [in_c, out_c, norms_c, d, locs]() mutable {
                const double* g = out_c.grad_ptr();
                const double* y = out_c.ptr();
                double* gx = in_c.grad_ptr();
                for (int loc = 0; loc < locs; ++loc) {
                    const double inv = 1.0 / norms_c.ptr()[loc];
                    double gy = 0.0;
                    for (int k = 0; k < d; ++k) {
                        const std::size_t i = static_cast<std::size_t>(k) * locs + loc;
                        gy += g[i] * y[i];
                    }
                    for (int k = 0; k < d; ++k) {
                        const std::size_t i = static_cast<std::size_t>(k) * locs + loc;
                        gx[i] += (g[i] - gy * y[i]) * inv;
                    }
                }
            },
            {out.grad});
    }
    return out;
}

Tensor local_distance(Tape* tape, const Tensor& x, const Tensor& p) {
    if (x.shape != p.shape) throw ShapeMismatch("local_distance: shapes differ");
    Tensor nx = frobenius_normalize(tape, x);
    Tensor np = frobenius_normalize(tape, p);
    return sumsq(tape, sub(tape, nx, np));
}

Tensor matching_distance(Tape* tape, const Tensor& x, const Tensor& p, bool per_location_norm) {
    if (x.shape != p.shape) throw ShapeMismatch("matching_distance: shapes differ");
    Tensor nx, np;
    if (per_location_norm) {
        nx = normalize_per_location(tape, x);
        np = normalize_per_location(tape, p);
    } else {
        nx = frobenius_normalize(tape, x);
        np = frobenius_normalize(tape, p);
    }
    return min_matching(tape, nx, np);
}

Tensor combined_distance(Tape* tape, const Tensor& x, const Tensor& p, const MetricConfig& cfg) {
    Tensor dl = local_distance(tape, x, p);
    if (cfg.gamma == 0.0) return dl;
    Tensor dm = matching_distance(tape, x, p, cfg.per_location_norm);
    return add(tape, dl, scale(tape, dm, cfg.gamma));
}

Tensor predict(Tape* tape, const Tensor& query, const std::vector<Prototype>& prototypes,
               const MetricConfig& cfg) {
    if (prototypes.size() < 2) throw ShapeMismatch("predict: need at least two prototypes");
    if (cfg.softmax_scale <= 0.0) throw InvalidConfig("predict: softmax_scale must be > 0");
    std::vector<Tensor> neg_scaled;
    neg_scaled.reserve(prototypes.size());
    for (const auto& proto : prototypes)
        neg_scaled.push_back(
            scale(tape, combined_distance(tape, query, proto.values, cfg), -cfg.softmax_scale));
    return softmax(tape, stack_scalars(tape, neg_scaled));
}

double local_distance(const Tensor& x, const Tensor& p) {
    return local_distance(nullptr, x, p).scalar();
}
double matching_distance(const Tensor& x, const Tensor& p, bool per_location_norm) {
    return matching_distance(nullptr, x, p, per_location_norm).scalar();
}
double combined_distance(const Tensor& x, const Tensor& p, const MetricConfig& cfg) {
    return combined_distance(nullptr, x, p, cfg).scalar();
}

}  // namespace lls
