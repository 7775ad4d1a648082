#pragma once

// Four-block convolutional feature extractor plus the per-location 1x1
// classifier. Each block: 3x3 conv (stride 1, pad 1, no bias) -> per-channel
// normalization -> ReLU -> 2x2 average downsample, so the spatial side
// shrinks by 2^4 overall.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "lls/tensor.hpp"

namespace lls {

struct BackboneArch {
    int input_side = 32;
    int in_channels = 1;
    std::array<int, 4> widths{16, 32, 64, 64};
    int num_classes = 20;  // base categories, output width of the classifier

    int feature_channels() const { return widths[3]; }
    int feature_side() const { return input_side / 16; }
};

struct ConvBlock {
    Tensor kernel;  // c_out×c_in×3×3
    Tensor gamma;   // [c_out]
    Tensor beta;    // [c_out]
    std::vector<double> running_mean;
    std::vector<double> running_var;
};

struct FeatureMap {
    Tensor values;  // d×h×w
    int source_id = -1;
};

struct BackboneParams {
    BackboneArch arch;
    std::array<ConvBlock, 4> blocks;
    Tensor classifier_W;  // d×c

    static BackboneParams init(const BackboneArch& arch, std::uint64_t seed);

    // Learnable tensors in a fixed order (conv kernels, gamma/beta pairs,
    // classifier last). Running statistics are not learnable.
    std::vector<Tensor*> learnable();
    std::size_t param_count() const;
    BackboneParams clone() const;
    bool all_finite() const;
};

// Batched forward through all four blocks. Training mode uses batch
// statistics in the normalization layers and updates the running stats;
// eval mode freezes them.
std::vector<Tensor> forward_batch(Tape* tape, BackboneParams& params,
                                  const std::vector<Tensor>& images, bool training);

// Single-image eval-mode forward (frozen statistics, pure function).
FeatureMap forward_features(const BackboneParams& params, const Tensor& image,
                            int source_id = -1);

// Per-location class probabilities: softmax(W^T phi_{i,j}) at every location.
Tensor local_classify(Tape* tape, const BackboneParams& params, const Tensor& fmap);

// Global average pooling of a feature map (ablation baseline path).
Tensor global_feature(Tape* tape, const Tensor& fmap);

}  // namespace lls
