#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "lls/losses.hpp"
#include "testutil.hpp"

using namespace lls;
using namespace lls::test;

TEST_CASE("similarity loss on indistinguishable classes is n*ln(way)") {
    // four identical maps, two per class: both prototypes coincide, every
    // distance is zero, so each sample sees a uniform 2-way softmax.
    Tensor m({2, 1, 1}, {3, 4});
    std::vector<std::pair<Tensor, int>> eps = {{m, 0}, {m, 0}, {m, 1}, {m, 1}};
    MetricConfig cfg;
    Tensor ls = similarity_loss(nullptr, eps, cfg);
    CHECK(ls.scalar() == doctest::Approx(4.0 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("similarity loss shrinks as classes separate") {
    std::mt19937_64 rng(3);
    MetricConfig cfg;
    Tensor a = random_tensor({4, 2, 2}, rng, 0.5, 1.0);
    Tensor b = scale(nullptr, a, -1.0);
    std::vector<std::pair<Tensor, int>> tight = {{a, 0}, {a, 0}, {b, 1}, {b, 1}};
    Tensor ls = similarity_loss(nullptr, tight, cfg);
    // well-separated classes drive the loss to (numerically) zero
    CHECK(ls.scalar() < 4.0 * std::log(2.0));
    CHECK(ls.scalar() >= 0.0);
}

TEST_CASE("similarity loss is invariant to a consistent class relabeling") {
    std::mt19937_64 rng(5);
    MetricConfig cfg;
    std::vector<std::pair<Tensor, int>> eps;
    for (int c = 0; c < 3; ++c)
        for (int s = 0; s < 2; ++s) eps.emplace_back(random_tensor({4, 2, 2}, rng), c);
    const double base = similarity_loss(nullptr, eps, cfg).scalar();
    // relabel 0->2, 1->0, 2->1
    auto relabeled = eps;
    for (auto& [m, l] : relabeled) l = (l + 2) % 3;
    CHECK(similarity_loss(nullptr, relabeled, cfg).scalar() ==
          doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("similarity loss needs at least two classes") {
    Tensor m({2, 1, 1}, {1, 2});
    std::vector<std::pair<Tensor, int>> one = {{m, 0}, {m, 0}};
    MetricConfig cfg;
    CHECK_THROWS_AS(similarity_loss(nullptr, one, cfg), EmptyClass);
}

TEST_CASE("leave-one-out excludes the query from its own prototype") {
    std::mt19937_64 rng(7);
    MetricConfig cfg;
    std::vector<std::pair<Tensor, int>> eps;
    for (int c = 0; c < 2; ++c)
        for (int s = 0; s < 3; ++s) eps.emplace_back(random_tensor({4, 2, 2}, rng), c);
    const double shared = similarity_loss(nullptr, eps, cfg).scalar();
    const double loo = similarity_loss(nullptr, eps, cfg, true).scalar();
    // excluding the query pushes its prototype away, so the loss rises
    CHECK(loo > shared);
    // leave-one-out with a single support per class is degenerate
    std::vector<std::pair<Tensor, int>> singles = {{random_tensor({4, 2, 2}, rng), 0},
                                                   {random_tensor({4, 2, 2}, rng), 1}};
    CHECK_THROWS_AS(similarity_loss(nullptr, singles, cfg, true), EmptyClass);
}

TEST_CASE("classification loss with zero weights is n*h*w*ln(c)") {
    std::mt19937_64 rng(9);
    const int c = 7, n = 3;
    Tensor w = zeros({4, c});
    std::vector<std::pair<Tensor, int>> maps;
    for (int i = 0; i < n; ++i) maps.emplace_back(random_tensor({4, 2, 2}, rng), i % c);
    Tensor lc = local_classification_loss(nullptr, maps, w);
    CHECK(lc.scalar() == doctest::Approx(n * 4.0 * std::log(double(c))).epsilon(1e-12));

    maps[0].second = c;  // out of range
    CHECK_THROWS_AS(local_classification_loss(nullptr, maps, w), LabelOutOfRange);
    maps[0].second = -1;
    CHECK_THROWS_AS(local_classification_loss(nullptr, maps, w), LabelOutOfRange);
}

TEST_CASE("classification loss decreases under gradient descent") {
    std::mt19937_64 rng(11);
    Tensor w = random_tensor({4, 5}, rng, -0.1, 0.1);
    std::vector<std::pair<Tensor, int>> maps;
    for (int i = 0; i < 10; ++i) maps.emplace_back(random_tensor({4, 2, 2}, rng), i % 5);
    double prev = 1e300;
    for (int step = 0; step < 50; ++step) {
        Tape tape;
        Tensor loss = local_classification_loss(&tape, maps, w);
        CHECK(loss.scalar() < prev);
        prev = loss.scalar();
        w.clear_grad();
        tape.backward(loss);
        for (std::size_t i = 0; i < w.size(); ++i) w.ptr()[i] -= 0.05 * w.grad_ptr()[i];
    }
    CHECK(prev < 10.0 * 4.0 * std::log(5.0));
}

TEST_CASE("regularization loss: norms {1,3} give variance 1") {
    // 1x1x2 map whose two location norms are 1 and 3
    Tensor m({1, 1, 2}, {1.0, 3.0});
    Tensor lr = local_regularization_loss(nullptr, {m});
    CHECK(lr.scalar() == doctest::Approx(1.0).epsilon(1e-12));

    // constant-norm map -> zero
    Tensor flat = full({2, 2, 2}, 0.5);
    CHECK(local_regularization_loss(nullptr, {flat}).scalar() ==
          doctest::Approx(0.0).epsilon(1e-15));

    // sums over samples
    Tensor lr2 = local_regularization_loss(nullptr, {m, m});
    CHECK(lr2.scalar() == doctest::Approx(2.0).epsilon(1e-12));

    // single-location map has no variance to compute
    CHECK_THROWS_AS(local_regularization_loss(nullptr, {full({2, 1, 1}, 1.0)}),
                    DegenerateMap);
}

TEST_CASE("regularization loss is scale-quadratic") {
    std::mt19937_64 rng(13);
    Tensor m = random_tensor({3, 2, 2}, rng, 0.2, 1.0);
    const double base = local_regularization_loss(nullptr, {m}).scalar();
    const double scaled =
        local_regularization_loss(nullptr, {scale(nullptr, m, 2.0)}).scalar();
    CHECK(scaled == doctest::Approx(4.0 * base).epsilon(1e-10));
}

TEST_CASE("total objective recombines the three terms with default weights") {
    std::mt19937_64 rng(15);
    EpisodeMaps ep;
    for (int c = 0; c < 3; ++c)
        for (int s = 0; s < 2; ++s) {
            ep.maps.push_back(random_tensor({4, 2, 2}, rng, 0.2, 1.0));
            ep.episode_labels.push_back(c);
            ep.base_labels.push_back(2 * c + s);
        }
    Tensor w = random_tensor({4, 7}, rng, -0.3, 0.3);
    MetricConfig cfg;
    LossWeights weights;

    std::vector<std::pair<Tensor, int>> sim, cls;
    for (std::size_t i = 0; i < ep.maps.size(); ++i) {
        sim.emplace_back(ep.maps[i], ep.episode_labels[i]);
        cls.emplace_back(ep.maps[i], ep.base_labels[i]);
    }
    const double want = local_classification_loss(nullptr, cls, w).scalar() +
                        0.2 * similarity_loss(nullptr, sim, cfg).scalar() +
                        0.0001 * local_regularization_loss(nullptr, ep.maps).scalar();
    Tensor j = total_objective(nullptr, ep, w, cfg, weights);
    CHECK(j.scalar() == doctest::Approx(want).epsilon(1e-12));

    // zero weights drop the auxiliary terms entirely
    LossWeights off{0.0, 0.0};
    Tensor j0 = total_objective(nullptr, ep, w, cfg, off);
    CHECK(j0.scalar() ==
          doctest::Approx(local_classification_loss(nullptr, cls, w).scalar())
              .epsilon(1e-12));
}

TEST_CASE("loss gradients match finite differences") {
    std::mt19937_64 rng(17);
    EpisodeMaps ep;
    for (int c = 0; c < 2; ++c)
        for (int s = 0; s < 2; ++s) {
            ep.maps.push_back(random_tensor({3, 2, 2}, rng, 0.2, 1.0));
            ep.episode_labels.push_back(c);
            ep.base_labels.push_back(c);
        }
    Tensor w = random_tensor({3, 4}, rng, -0.3, 0.3);
    MetricConfig cfg;
    LossWeights weights;

    auto loss_value = [&]() {
        return total_objective(nullptr, ep, w, cfg, weights).scalar();
    };
    Tape tape;
    Tensor loss = total_objective(&tape, ep, w, cfg, weights);
    tape.backward(loss);
    std::vector<Tensor*> params = {&w};
    for (auto& m : ep.maps) params.push_back(&m);
    for (Tensor* p : params) {
        std::vector<double> analytic(p->grad_ptr(), p->grad_ptr() + p->size());
        CHECK(finite_diff_max_rel_err(*p, loss_value, analytic) <= 1e-4);
    }
}
