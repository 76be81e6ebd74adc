#include "doctest.h"
#include "generators.hpp"

#include "protopaws/errors.hpp"
#include "protopaws/knn.hpp"
#include "protopaws/synth.hpp"

#include <cmath>

using namespace protopaws;

namespace {

Vector<double> unit(Eigen::Index d, Eigen::Index axis) {
    Vector<double> v = Vector<double>::Zero(d);
    v[axis] = 1.0;
    return v;
}

} // namespace

TEST_SUITE("synth-data") {

TEST_CASE("sample_vmf") {
    Rng rng(10);
    SUBCASE("kappa = 0 is uniform on the sphere") {
        Vector<double> mean = Vector<double>::Zero(5);
        for (int i = 0; i < 10000; ++i) {
            const auto x = sample_vmf(unit(5, 0), 0.0, rng);
            CHECK(x.norm() == doctest::Approx(1.0).epsilon(1e-12));
            mean += x;
        }
        CHECK((mean / 10000.0).norm() < 0.05);
    }
    SUBCASE("huge kappa stays on the mean direction") {
        const Vector<double> mu = gen::unit_rows(rng, 1, 6).row(0).transpose();
        for (int i = 0; i < 100; ++i) {
            const auto x = sample_vmf(mu, 1e8, rng);
            CHECK(std::acos(std::min(1.0, x.dot(mu))) < 1e-3);
        }
    }
    SUBCASE("mean resultant length in 3-D matches coth(k) - 1/k") {
        Vector<double> mean = Vector<double>::Zero(3);
        for (int i = 0; i < 100000; ++i) mean += sample_vmf(unit(3, 2), 10.0, rng);
        const double expected = 1.0 / std::tanh(10.0) - 0.1;
        CHECK(mean_resultant_length_3d(10.0) == doctest::Approx(expected));
        CHECK(std::abs(mean.norm() / 100000.0 - expected) < 0.01);
    }
    SUBCASE("bad inputs") {
        CHECK_THROWS_AS(sample_vmf(Vector<double>::Ones(3), 1.0, rng), ContractError);
        CHECK_THROWS_AS(sample_vmf(unit(3, 0), -1.0, rng), ContractError);
    }
}

TEST_CASE("gen_mixture") {
    SUBCASE("very concentrated classes are 1-NN separable") {
        auto spec = MixtureSpec::balanced(10, 30, 64);
        spec.class_kappa = 1e4;
        spec.n_local = 0;
        spec.seed = 1;
        const auto ds = gen_mixture(spec);
        Rng rng(2);
        const auto [train, eval] = split_stratified(ds, 0.3, rng);
        KnnConfig cfg;
        cfg.k = 1;
        CHECK(evaluate_knn(train, eval, cfg) == 1.0);
    }
    SUBCASE("same seed, same dataset") {
        auto spec = MixtureSpec::balanced(3, 5, 8);
        spec.seed = 42;
        CHECK(gen_mixture(spec) == gen_mixture(spec));
        auto other = spec;
        other.seed = 43;
        CHECK_FALSE(gen_mixture(spec) == gen_mixture(other));
    }
    SUBCASE("per-class counts are exact") {
        MixtureSpec spec;
        spec.dim = 16;
        for (std::uint32_t c = 1; c <= 10; ++c) spec.points_per_class.push_back(10 * c);
        const auto ds = gen_mixture(spec);
        CHECK(ds.n_items == 550);
        for (ClassId c = 0; c < 10; ++c) {
            CHECK(std::count(ds.labels->begin(), ds.labels->end(), c) == 10 * (c + 1));
        }
        CHECK(ds.global_views.size() == 550u * 4u * 16u);
        CHECK(ds.local_views.size() == 550u * 8u * 16u);
    }
    SUBCASE("class means are orthonormal") {
        const auto m = mixture_means(MixtureSpec::balanced(5, 1, 12));
        CHECK((m.transpose() * m - RowMatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff() < 1e-12);
    }
    SUBCASE("more classes than dimensions") {
        CHECK_THROWS_AS(gen_mixture(MixtureSpec::balanced(10, 3, 8)), ContractError);
    }
}

}
