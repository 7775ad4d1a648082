#include "lls/backbone.hpp"

#include <cmath>

namespace lls {

BackboneParams BackboneParams::init(const BackboneArch& arch, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    BackboneParams p;
    p.arch = arch;
    int c_in = arch.in_channels;
    for (int b = 0; b < 4; ++b) {
        const int c_out = arch.widths[b];
        const double bound = std::sqrt(6.0 / (c_in * 9));  // He-uniform fan-in
        p.blocks[b].kernel = uniform({c_out, c_in, 3, 3}, -bound, bound, rng);
        p.blocks[b].gamma = full({c_out}, 1.0);
        p.blocks[b].beta = zeros({c_out});
        p.blocks[b].running_mean.assign(c_out, 0.0);
        p.blocks[b].running_var.assign(c_out, 1.0);
        c_in = c_out;
    }
    const int d = arch.feature_channels();
    const double wb = 1.0 / std::sqrt(static_cast<double>(d));
    p.classifier_W = uniform({d, arch.num_classes}, -wb, wb, rng);
    return p;
}

std::vector<Tensor*> BackboneParams::learnable() {
    std::vector<Tensor*> out;
    for (auto& b : blocks) {
        out.push_back(&b.kernel);
        out.push_back(&b.gamma);
        out.push_back(&b.beta);
    }
    out.push_back(&classifier_W);
    return out;
}

std::size_t BackboneParams::param_count() const {
    std::size_t n = 0;
    for (const auto& b : blocks) n += b.kernel.size() + b.gamma.size() + b.beta.size();
    return n + classifier_W.size();
}

BackboneParams BackboneParams::clone() const {
    BackboneParams c;
    c.arch = arch;
    for (int b = 0; b < 4; ++b) {
        c.blocks[b].kernel = Tensor(blocks[b].kernel.shape, *blocks[b].kernel.data);
        c.blocks[b].gamma = Tensor(blocks[b].gamma.shape, *blocks[b].gamma.data);
        c.blocks[b].beta = Tensor(blocks[b].beta.shape, *blocks[b].beta.data);
        c.blocks[b].running_mean = blocks[b].running_mean;
        c.blocks[b].running_var = blocks[b].running_var;
    }
    c.classifier_W = Tensor(classifier_W.shape, *classifier_W.data);
    return c;
}

bool BackboneParams::all_finite() const {
    for (const auto& b : blocks) {
        if (!b.kernel.all_finite() || !b.gamma.all_finite() || !b.beta.all_finite()) return false;
        for (double v : b.running_mean)
            if (!std::isfinite(v)) return false;
        for (double v : b.running_var)
            if (!std::isfinite(v)) return false;
    }
    return classifier_W.all_finite();
}

std::vector<Tensor> forward_batch(Tape* tape, BackboneParams& params,
                                  const std::vector<Tensor>& images, bool training) {
    if (images.empty()) throw ShapeMismatch("forward_batch: empty batch");
    for (const auto& img : images) {
        if (img.shape.size() != 3 || img.shape[0] != params.arch.in_channels ||
            img.shape[1] != params.arch.input_side || img.shape[2] != params.arch.input_side)
            throw ShapeMismatch("forward_batch: image shape does not match arch");
    }
    std::vector<Tensor> cur = images;
    for (int b = 0; b < 4; ++b) {
        auto& blk = params.blocks[b];
        std::vector<Tensor> conved;
        conved.reserve(cur.size());
        for (const auto& x : cur) conved.push_back(conv2d(tape, x, blk.kernel, 1, 1));
        std::vector<Tensor> normed =
            batch_channel_norm(tape, conved, blk.gamma, blk.beta, blk.running_mean,
                               blk.running_var, training);
        std::vector<Tensor> next;
        next.reserve(cur.size());
        for (const auto& x : normed) next.push_back(avg_pool2x2(tape, relu(tape, x)));
        cur = std::move(next);
    }
    return cur;
}

FeatureMap forward_features(const BackboneParams& params, const Tensor& image, int source_id) {
    // Eval path never mutates running statistics, so the const_cast is safe.
    auto& mut = const_cast<BackboneParams&>(params);
    std::vector<Tensor> out = forward_batch(nullptr, mut, {image}, /*training=*/false);
    return FeatureMap{out[0], source_id};
}

Tensor local_classify(Tape* tape, const BackboneParams& params, const Tensor& fmap) {
    if (fmap.shape.size() != 3 || fmap.shape[0] != params.arch.feature_channels())
        throw ShapeMismatch("local_classify: feature map channels disagree with classifier");
    return channel_softmax(tape, conv1x1(tape, fmap, params.classifier_W));
}

Tensor global_feature(Tape* tape, const Tensor& fmap) { return global_avg_pool(tape, fmap); }

}  // namespace lls
