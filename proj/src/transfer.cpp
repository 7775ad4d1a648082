#include "lls/transfer.hpp"

#include "lls/kernels.hpp"

namespace lls {

Tensor base_similar_map(const Tensor& fmap, const BackboneParams& params) {
    const Tensor& W = params.classifier_W;  // d×c
    if (fmap.shape.size() != 3 || fmap.shape[0] != W.shape[0])
        throw ShapeMismatch("base_similar_map: feature channels disagree with classifier");
    const int d = W.shape[0];
    const int c = W.shape[1];
    const int locs = fmap.shape[1] * fmap.shape[2];
    Tensor probs = local_classify(nullptr, params, fmap);  // c×h×w
    // out[k][loc] = sum_l W[k][l] * probs[l][loc]
    Tensor out = zeros(fmap.shape);
    kernels::active().gemm_accum(d, locs, c, W.ptr(), probs.ptr(), out.ptr());
    return out;
}

Tensor refine_map(const Tensor& fmap, const BackboneParams& params, const TransferConfig& cfg) {
    if (cfg.beta < 0.0 || cfg.beta > 1.0)
        throw InvalidConfig("refine_map: beta must lie in [0,1]");
    Tensor orig = frobenius_normalize(nullptr, fmap);
    if (cfg.beta == 1.0) return orig;
    Tensor similar = frobenius_normalize(nullptr, base_similar_map(fmap, params));
    return add(nullptr, scale(nullptr, orig, cfg.beta),
               scale(nullptr, similar, 1.0 - cfg.beta));
}

}  // namespace lls
