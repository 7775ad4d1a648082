#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "lls/backbone.hpp"
#include "testutil.hpp"

using namespace lls;
using namespace lls::test;

namespace {

BackboneArch desk_arch() { return BackboneArch{}; }

Tensor random_image(std::mt19937_64& rng, int side = 32) {
    return random_tensor({1, side, side}, rng, 0.0, 1.0);
}

}  // namespace

TEST_CASE("feature map shape is 64x2x2 for 32x32 inputs") {
    BackboneParams params = BackboneParams::init(desk_arch(), 1);
    std::mt19937_64 rng(2);
    FeatureMap fm = forward_features(params, random_image(rng));
    CHECK(fm.values.shape == std::vector<int>{64, 2, 2});

    BackboneArch wide = desk_arch();
    wide.input_side = 48;
    BackboneParams p2 = BackboneParams::init(wide, 1);
    FeatureMap fm2 = forward_features(p2, random_tensor({1, 48, 48}, rng, 0.0, 1.0));
    CHECK(fm2.values.shape == std::vector<int>{64, 3, 3});
}

TEST_CASE("forward is deterministic for fixed params") {
    BackboneParams params = BackboneParams::init(desk_arch(), 7);
    std::mt19937_64 rng(3);
    Tensor img = random_image(rng);
    FeatureMap a = forward_features(params, img);
    FeatureMap b = forward_features(params, img);
    CHECK(bit_equal(a.values, b.values));

    // same seed -> identical init; different seed -> different kernels
    BackboneParams q = BackboneParams::init(desk_arch(), 7);
    CHECK(bit_equal(params.blocks[0].kernel, q.blocks[0].kernel));
    CHECK(bit_equal(params.classifier_W, q.classifier_W));
    BackboneParams r = BackboneParams::init(desk_arch(), 8);
    CHECK_FALSE(bit_equal(params.blocks[0].kernel, r.blocks[0].kernel));
}

TEST_CASE("all-zero image yields a finite feature map") {
    BackboneParams params = BackboneParams::init(desk_arch(), 11);
    FeatureMap fm = forward_features(params, zeros({1, 32, 32}));
    CHECK(fm.values.all_finite());
}

TEST_CASE("local classifier emits a distribution at every location") {
    BackboneParams params = BackboneParams::init(desk_arch(), 5);
    std::mt19937_64 rng(9);
    FeatureMap fm = forward_features(params, random_image(rng));
    Tensor probs = local_classify(nullptr, params, fm.values);
    CHECK(probs.shape == std::vector<int>{20, 2, 2});
    for (int loc = 0; loc < 4; ++loc) {
        double total = 0.0;
        for (int c = 0; c < 20; ++c) {
            const double p = probs.ptr()[c * 4 + loc];
            CHECK(p >= 0.0);
            total += p;
        }
        CHECK(std::abs(total - 1.0) <= 1e-12);
    }

    // matches a by-hand softmax(W^T phi) at one location
    const int loc = 1;
    std::vector<double> logits(20, 0.0);
    for (int c = 0; c < 20; ++c)
        for (int d = 0; d < 64; ++d)
            logits[c] += params.classifier_W.ptr()[d * 20 + c] * fm.values.ptr()[d * 4 + loc];
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : logits) z += std::exp(v - mx);
    for (int c = 0; c < 20; ++c)
        CHECK(probs.ptr()[c * 4 + loc] == doctest::Approx(std::exp(logits[c] - mx) / z)
                                              .epsilon(1e-10));
}

TEST_CASE("parameter count matches the architecture") {
    BackboneParams params = BackboneParams::init(desk_arch(), 1);
    // conv kernels: 16*1*9 + 32*16*9 + 64*32*9 + 64*64*9 = 60 048
    // gamma+beta: 2*(16+32+64+64) = 352; classifier: 64*20 = 1280
    CHECK(params.param_count() == 60048u + 352u + 1280u);
    CHECK(params.learnable().size() == 4u + 8u + 1u);
}

TEST_CASE("training-mode batch forward backpropagates to every learnable tensor") {
    BackboneArch tiny;
    tiny.input_side = 16;
    tiny.widths = {2, 3, 3, 4};
    tiny.num_classes = 3;
    BackboneParams params = BackboneParams::init(tiny, 13);
    std::mt19937_64 rng(14);
    std::vector<Tensor> imgs = {random_tensor({1, 16, 16}, rng, 0.0, 1.0),
                                random_tensor({1, 16, 16}, rng, 0.0, 1.0),
                                random_tensor({1, 16, 16}, rng, 0.0, 1.0)};

    Tape tape;
    auto maps = forward_batch(&tape, params, imgs, /*training=*/true);
    CHECK(maps.size() == imgs.size());
    CHECK(maps[0].shape == std::vector<int>{4, 1, 1});
    Tensor loss;
    for (auto& m : maps) {
        Tensor probs = local_classify(&tape, params, m);
        Tensor term = sumsq(&tape, probs);
        loss = loss.defined() ? add(&tape, loss, term) : term;
    }
    tape.backward(loss);
    for (Tensor* p : params.learnable()) {
        double g = 0.0;
        for (std::size_t i = 0; i < p->size(); ++i) g += std::abs(p->grad_ptr()[i]);
        CHECK(g > 0.0);
    }
    // running statistics moved off their init values
    CHECK(params.blocks[0].running_mean[0] != 0.0);
}

TEST_CASE("clone is deep") {
    BackboneParams params = BackboneParams::init(desk_arch(), 21);
    BackboneParams copy = params.clone();
    copy.blocks[0].kernel.ptr()[0] += 1.0;
    copy.blocks[0].running_mean[0] += 1.0;
    CHECK(params.blocks[0].kernel.ptr()[0] != copy.blocks[0].kernel.ptr()[0]);
    CHECK(params.blocks[0].running_mean[0] != copy.blocks[0].running_mean[0]);
    CHECK(params.all_finite());
}
