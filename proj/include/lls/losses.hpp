#pragma once

// The three training losses and their weighted combination:
//   L_S  episode similarity loss over prototype distances
//   L_C  per-location classification loss against base labels
//   L_R  variance of per-location feature norms
//   J  = L_C + lambda_S * L_S + lambda_R * L_R

#include <utility>
#include <vector>

#include "lls/metric.hpp"
#include "lls/tensor.hpp"

namespace lls {

struct LossWeights {
    double lambda_s = 0.2;
    double lambda_r = 0.0001;
};

// Episode maps carry both label views: episode-local labels for L_S and base
// category ids for L_C.
struct EpisodeMaps {
    std::vector<Tensor> maps;
    std::vector<int> episode_labels;  // in [0, way)
    std::vector<int> base_labels;     // in [0, c)
};

// Cross-entropy of softmax(-scale * D(map, P_c)) summed over samples; the
// episode acts as its own support set, so prototypes include each sample
// unless leave_one_out is set.
Tensor similarity_loss(Tape* tape, const std::vector<std::pair<Tensor, int>>& episode_maps,
                       const MetricConfig& cfg, bool leave_one_out = false);

// Sum over samples and locations of the per-location cross-entropy of the
// 1x1 classifier against the base label.
Tensor local_classification_loss(Tape* tape,
                                 const std::vector<std::pair<Tensor, int>>& maps_with_labels,
                                 const Tensor& classifier_W);

// Sum over samples of the population variance of per-location L2 norms.
Tensor local_regularization_loss(Tape* tape, const std::vector<Tensor>& maps);

Tensor total_objective(Tape* tape, const EpisodeMaps& episode, const Tensor& classifier_W,
                       const MetricConfig& cfg, const LossWeights& weights,
                       bool leave_one_out = false);

}  // namespace lls
