#pragma once

// Local-level knowledge transfer: each location of a novel feature map is
// replaced by the probability-weighted combination of classifier weight rows
// (its base-similar version), then blended with the original map after
// Frobenius normalization. Inference-time only.

#include "lls/backbone.hpp"
#include "lls/tensor.hpp"

namespace lls {

struct TransferConfig {
    double beta = 0.8;  // blend weight for the original map, in [0,1]
    // Apply the refinement to support maps as well as queries (default) or
    // to queries only (ablation flag).
    bool refine_supports = true;
};

// phi^s: at every location, sum_l p_l * W_l where p = per-location class
// probabilities. Every location lies in the convex hull of the W rows.
Tensor base_similar_map(const Tensor& fmap, const BackboneParams& params);

// beta * N(phi) + (1-beta) * N(phi^s); beta=1 recovers N(phi) exactly.
Tensor refine_map(const Tensor& fmap, const BackboneParams& params, const TransferConfig& cfg);

}  // namespace lls
