#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "lls/metric.hpp"
#include "lls/transfer.hpp"
#include "testutil.hpp"

using namespace lls;
using namespace lls::test;

namespace {

// minimal params carrier: only classifier_W matters for the transfer maps
BackboneParams with_classifier(Tensor w) {
    BackboneArch arch;
    arch.widths = {static_cast<int>(w.shape[0]), static_cast<int>(w.shape[0]),
                   static_cast<int>(w.shape[0]), static_cast<int>(w.shape[0])};
    arch.num_classes = w.shape[1];
    BackboneParams p = BackboneParams::init(arch, 1);
    p.classifier_W = std::move(w);
    return p;
}

}  // namespace

TEST_CASE("a location aligned with one weight row maps onto that row") {
    // rows far apart with strongly scaled logits: probabilities go one-hot
    Tensor w({2, 3}, {40.0, 0.0, -40.0,   // feature dim 0
                      0.0, 40.0, -40.0});  // feature dim 1
    BackboneParams params = with_classifier(w);

    Tensor fmap({2, 1, 1}, {1.0, 0.0});  // aligned with class 0's column
    Tensor sim = base_similar_map(fmap, params);
    CHECK(sim.shape == std::vector<int>{2, 1, 1});
    // p ~ one-hot on class 0, so phi^s ~ W column 0 = (40, 0)
    CHECK(sim.ptr()[0] == doctest::Approx(40.0).epsilon(1e-10));
    CHECK(sim.ptr()[1] == doctest::Approx(0.0).scale(1e-10));
}

TEST_CASE("uniform probabilities give the mean of the weight rows") {
    Tensor w({2, 4}, {1.0, 2.0, 3.0, 4.0,
                      5.0, 6.0, 7.0, 8.0});
    BackboneParams params = with_classifier(w);
    Tensor fmap({2, 1, 1}, {0.0, 0.0});  // zero feature -> all logits equal
    Tensor sim = base_similar_map(fmap, params);
    CHECK(sim.ptr()[0] == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(sim.ptr()[1] == doctest::Approx(6.5).epsilon(1e-12));
}

TEST_CASE("base-similar map matches the direct per-location computation") {
    std::mt19937_64 rng(5);
    Tensor w = random_tensor({4, 6}, rng);
    BackboneParams params = with_classifier(w);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor fmap = random_tensor({4, 2, 2}, rng);
        Tensor sim = base_similar_map(fmap, params);
        for (int loc = 0; loc < 4; ++loc) {
            // logits, softmax, weighted sum of columns of W^T (rows of W^T = classes)
            std::vector<double> logits(6, 0.0);
            for (int c = 0; c < 6; ++c)
                for (int d = 0; d < 4; ++d)
                    logits[c] += w.ptr()[d * 6 + c] * fmap.ptr()[d * 4 + loc];
            double mx = logits[0];
            for (double v : logits) mx = std::max(mx, v);
            double z = 0.0;
            for (double v : logits) z += std::exp(v - mx);
            for (int d = 0; d < 4; ++d) {
                double want = 0.0;
                for (int c = 0; c < 6; ++c)
                    want += std::exp(logits[c] - mx) / z * w.ptr()[d * 6 + c];
                CHECK(sim.ptr()[d * 4 + loc] == doctest::Approx(want).epsilon(1e-10));
            }
        }
    }
}

TEST_CASE("every refined-source location lies in the hull of the weight rows") {
    // least-squares residual of expressing each location as a convex
    // combination must be ~0; here checked via the simplex-combination bound:
    // each coordinate lies within [min_c W_dc, max_c W_dc].
    std::mt19937_64 rng(7);
    Tensor w = random_tensor({4, 6}, rng);
    BackboneParams params = with_classifier(w);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor fmap = random_tensor({4, 2, 2}, rng, -3, 3);
        Tensor sim = base_similar_map(fmap, params);
        for (int d = 0; d < 4; ++d) {
            double lo = 1e300, hi = -1e300;
            for (int c = 0; c < 6; ++c) {
                lo = std::min(lo, w.ptr()[d * 6 + c]);
                hi = std::max(hi, w.ptr()[d * 6 + c]);
            }
            for (int loc = 0; loc < 4; ++loc) {
                CHECK(sim.ptr()[d * 4 + loc] >= lo - 1e-12);
                CHECK(sim.ptr()[d * 4 + loc] <= hi + 1e-12);
            }
        }
    }
}

TEST_CASE("refinement is affine in beta and beta=1 recovers N(phi)") {
    std::mt19937_64 rng(9);
    Tensor w = random_tensor({4, 6}, rng);
    BackboneParams params = with_classifier(w);
    Tensor fmap = random_tensor({4, 2, 2}, rng, 0.2, 1.0);

    TransferConfig c1{1.0, true};
    Tensor r1 = refine_map(fmap, params, c1);
    CHECK(bit_equal(r1, normalize_map(nullptr, fmap)));

    TransferConfig c0{0.0, true};
    Tensor r0 = refine_map(fmap, params, c0);
    CHECK(max_abs_diff(r0, normalize_map(nullptr, base_similar_map(fmap, params))) <= 1e-12);

    // midpoint: refine(0.5) == (refine(1) + refine(0)) / 2
    TransferConfig ch{0.5, true};
    Tensor rh = refine_map(fmap, params, ch);
    Tensor mid = scale(nullptr, add(nullptr, r1, r0), 0.5);
    CHECK(max_abs_diff(rh, mid) <= 1e-12);
}

TEST_CASE("beta outside [0,1] is rejected") {
    std::mt19937_64 rng(11);
    Tensor w = random_tensor({2, 3}, rng);
    BackboneParams params = with_classifier(w);
    Tensor fmap = random_tensor({2, 1, 1}, rng, 0.2, 1.0);
    CHECK_THROWS_AS(refine_map(fmap, params, TransferConfig{-0.1, true}), InvalidConfig);
    CHECK_THROWS_AS(refine_map(fmap, params, TransferConfig{1.5, true}), InvalidConfig);
}

TEST_CASE("refinement changes distances but keeps them well-defined") {
    std::mt19937_64 rng(13);
    Tensor w = random_tensor({4, 6}, rng);
    BackboneParams params = with_classifier(w);
    TransferConfig cfg;  // beta = 0.8
    MetricConfig mcfg;
    for (int trial = 0; trial < 10; ++trial) {
        Tensor a = random_tensor({4, 2, 2}, rng, 0.2, 1.0);
        Tensor b = random_tensor({4, 2, 2}, rng, 0.2, 1.0);
        Tensor ra = refine_map(a, params, cfg);
        Tensor rb = refine_map(b, params, cfg);
        CHECK(ra.all_finite());
        const double d = combined_distance(ra, rb, mcfg);
        CHECK(d >= 0.0);
        CHECK(std::isfinite(d));
        CHECK(combined_distance(ra, ra, mcfg) == 0.0);
    }
}
