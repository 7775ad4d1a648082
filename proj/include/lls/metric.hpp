#pragma once

// Prototype construction and the local-level similarity measure: aligned
// local distance d_L, minimum matching distance d_M, and their weighted
// combination D = d_L + gamma * d_M over Frobenius-normalized feature maps.

#include <utility>
#include <vector>

#include "lls/tensor.hpp"

namespace lls {

struct Prototype {
    Tensor values;  // d×h×w
    int class_index = -1;
};

struct MetricConfig {
    double gamma = 0.6;         // matching-distance weight
    double softmax_scale = 10.0;  // applied to negative distances before softmax
    // Non-standard variant: L2-normalize each location before the matching
    // distance instead of relying on the whole-map normalization alone.
    bool per_location_norm = false;
};

// Elementwise mean of the supports per class; every class in
// [0, num_classes) must have at least one support. Supports are summed in
// ascending index order so the result is bit-reproducible.
std::vector<Prototype> compute_prototypes(Tape* tape,
                                          const std::vector<std::pair<Tensor, int>>& supports,
                                          int num_classes);

// x / ||x||_F
Tensor normalize_map(Tape* tape, const Tensor& x);
// Unit-L2 per spatial location (zero locations rejected via ZeroMap).
Tensor normalize_per_location(Tape* tape, const Tensor& x);

// d_L(x,p) = ||N(x) - N(p)||_F^2
Tensor local_distance(Tape* tape, const Tensor& x, const Tensor& p);
// d_M(x,p) = sum_i min_a ||N_i(x) - N_a(p)||^2
Tensor matching_distance(Tape* tape, const Tensor& x, const Tensor& p,
                         bool per_location_norm = false);
// D = d_L + gamma * d_M
Tensor combined_distance(Tape* tape, const Tensor& x, const Tensor& p, const MetricConfig& cfg);

// softmax(-scale * D(query, P_c)) over prototypes
Tensor predict(Tape* tape, const Tensor& query, const std::vector<Prototype>& prototypes,
               const MetricConfig& cfg);

// Plain-value conveniences for evaluation paths.
double local_distance(const Tensor& x, const Tensor& p);
double matching_distance(const Tensor& x, const Tensor& p, bool per_location_norm = false);
double combined_distance(const Tensor& x, const Tensor& p, const MetricConfig& cfg);

}  // namespace lls
