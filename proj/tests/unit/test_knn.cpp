#include "doctest.h"
#include "generators.hpp"

#include "protopaws/errors.hpp"
#include "protopaws/knn.hpp"
#include "protopaws/synth.hpp"

#include <algorithm>
#include <cmath>

using namespace protopaws;

TEST_SUITE("eval-knn") {

TEST_CASE("single training point") {
    RowMatrixXd train(1, 2);
    train << 0.6, 0.8;
    const std::vector<ClassId> y{2};
    const std::vector<double> q{1.0, 0.0};
    const auto p = knn_predict<double>(train, y, 3, q, {});
    CHECK(p[2] == doctest::Approx(1.0));
    CHECK(p[0] == 0.0);
}

TEST_CASE("query equal to a training point with k = 1") {
    Rng rng(1);
    const RowMatrixXd train = gen::unit_rows(rng, 10, 4);
    std::vector<ClassId> y(10);
    for (int i = 0; i < 10; ++i) y[static_cast<std::size_t>(i)] = i % 3;
    KnnConfig cfg;
    cfg.k = 1;
    const std::vector<double> q(train.row(7).data(), train.row(7).data() + 4);
    CHECK(knn_predict<double>(train, y, 3, q, cfg)[1] == doctest::Approx(1.0));
}

TEST_CASE("five-point hand example") {
    // sims to the query: 0.9, 0.8, 0.5, -0.2, 0.85 -> top 3 are items 0, 4, 1
    const std::vector<double> sims{0.9, 0.8, 0.5, -0.2, 0.85};
    const std::vector<ClassId> y{0, 1, 1, 0, 1};
    KnnConfig cfg;
    cfg.k = 3;
    cfg.tau = 0.1;
    const auto p = knn_vote(sims, y, 2, cfg);
    const double w0 = std::exp(9.0);
    const double w1 = std::exp(8.0) + std::exp(8.5);
    CHECK(std::abs(p[0] - w0 / (w0 + w1)) < 1e-10);
    CHECK(std::abs(p[1] - w1 / (w0 + w1)) < 1e-10);
}

TEST_CASE("similarity ties go to the lower index") {
    const std::vector<double> sims{0.5, 0.5};
    const std::vector<ClassId> y{1, 0};
    KnnConfig cfg;
    cfg.k = 1;
    CHECK(knn_vote(sims, y, 2, cfg)[1] == doctest::Approx(1.0));
}

TEST_CASE("evaluate_knn") {
    auto spec = MixtureSpec::balanced(10, 60, 16);
    spec.seed = 4;
    spec.class_kappa = 30.0;
    spec.n_local = 0;
    const auto ds = gen_mixture(spec);

    SUBCASE("self-evaluation with k = 1 is perfect") {
        KnnConfig cfg;
        cfg.k = 1;
        CHECK(evaluate_knn(ds, ds, cfg) == 1.0);
    }
    SUBCASE("permuted labels are at chance") {
        auto big = MixtureSpec::balanced(10, 400, 16);
        big.seed = 6;
        big.n_local = 0;
        auto shuffled = gen_mixture(big);
        Rng rng(2);
        std::shuffle(shuffled.labels->begin(), shuffled.labels->end(), rng);
        Rng split_rng(3);
        const auto [train, eval] = split_stratified(shuffled, 0.5, split_rng);
        KnnConfig cfg;
        cfg.k = 20;
        CHECK(std::abs(evaluate_knn(train, eval, cfg) - 0.1) <= 0.03);
    }
    SUBCASE("separable two-class mixture") {
        auto two = MixtureSpec::balanced(2, 200, 8);
        two.seed = 9;
        two.n_local = 0;
        const auto mix = gen_mixture(two);
        Rng rng(1);
        const auto [train, eval] = split_stratified(mix, 0.3, rng);
        CHECK(evaluate_knn(train, eval, {}) >= 0.99);
    }
    SUBCASE("head representation runs and stays in range") {
        Rng rng(5);
        const auto head = init_head<float>(16, 16, 8, rng);
        const double acc = evaluate_knn(ds, ds, {}, &head);
        CHECK(acc >= 0.0);
        CHECK(acc <= 1.0);
    }
}

TEST_CASE("empty training set is a contract error") {
    const std::vector<double> sims;
    const std::vector<ClassId> y;
    CHECK_THROWS_AS(knn_vote(sims, y, 2, {}), ContractError);
}

TEST_CASE("argmax takes the lowest index on ties") {
    const std::vector<double> v{0.2, 0.4, 0.4};
    CHECK(argmax(v) == 1);
}

}
