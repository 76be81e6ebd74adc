#include "doctest.h"
#include "generators.hpp"
#include "gradient_cases.hpp"
#include "oracles.hpp"

#include "protopaws/errors.hpp"
#include "protopaws/synth.hpp"
#include "protopaws/vmf_sne.hpp"

#include <cmath>
#include <numbers>

using namespace protopaws;

namespace {

RowMatrixXd polygon(int b) {
    RowMatrixXd z(b, 2);
    for (int i = 0; i < b; ++i) {
        const double a = 2.0 * std::numbers::pi * i / b;
        z(i, 0) = std::cos(a);
        z(i, 1) = std::sin(a);
    }
    return z;
}

VmfSneConfig with_perplexity(double perp) {
    VmfSneConfig cfg;
    cfg.perplexity = perp;
    return cfg;
}

} // namespace

TEST_SUITE("vmf-sne") {

TEST_CASE("row entropy of equal similarities is log2 of the count") {
    const std::vector<double> sims(4, 0.3);
    CHECK(vmf_row_entropy_bits(sims, 17.0) == doctest::Approx(2.0).epsilon(1e-12));
    const auto r = bisect_kappa(sims, 1.0, with_perplexity(2.0));
    CHECK(r.degenerate);
    CHECK(r.entropy_bits == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("entropy matches the unshifted oracle") {
    const std::vector<double> sims{0.9, 0.1, -0.5, 0.4};
    for (double k : {0.01, 0.5, 3.0, 20.0}) {
        CHECK(vmf_row_entropy_bits(sims, k) == doctest::Approx(oracle::entropy_bits(sims, k)).epsilon(1e-10));
    }
    // large kappa stays finite and tends to zero
    CHECK(vmf_row_entropy_bits(sims, 1e5) < 1e-6);
}

TEST_CASE("bisect_kappa") {
    SUBCASE("maximal target returns kappa_min") {
        const std::vector<double> sims{0.9, 0.1, -0.5, 0.4};
        const auto cfg = with_perplexity(2.0);
        const auto r = bisect_kappa(sims, std::log2(4.0), cfg);
        CHECK(r.kappa == doctest::Approx(cfg.kappa_min));
    }
    SUBCASE("one-bit target agrees with a grid search") {
        const std::vector<double> sims{0.9, 0.1, -0.5};
        const auto r = bisect_kappa(sims, 1.0, with_perplexity(2.0));
        CHECK_FALSE(r.degenerate);
        CHECK_FALSE(r.clamped);
        CHECK(std::abs(r.entropy_bits - 1.0) <= 1e-4);
        const double grid = oracle::grid_kappa(sims, 1.0);
        CHECK(std::abs(r.kappa - grid) / grid < 1e-3);
    }
    SUBCASE("very low targets expand the bracket") {
        const std::vector<double> sims{0.9, 0.8999, -0.5};
        auto cfg = with_perplexity(2.0);
        cfg.kappa_max = 2.0;
        const auto r = bisect_kappa(sims, 1.01, cfg);
        CHECK(std::abs(r.entropy_bits - 1.01) <= 1e-4);
        CHECK(r.kappa > 2.0);
    }
    SUBCASE("target above log2(b - 1) is rejected") {
        const std::vector<double> sims{0.2, 0.1};
        CHECK_THROWS_AS(bisect_kappa(sims, 1.5, with_perplexity(2.0)), ContractError);
    }
}

TEST_CASE("P matrix") {
    SUBCASE("equilateral triangle gives 1/6 everywhere off the diagonal") {
        const auto p = build_p_matrix(polygon(3), with_perplexity(2.0));
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) CHECK(p.probs(i, j) == doctest::Approx(i == j ? 0.0 : 1.0 / 6.0));
        }
        CHECK(p.degenerate_rows == 3);
    }
    SUBCASE("random batch matches the direct formula with the same concentrations") {
        Rng rng(31);
        const RowMatrixXd z = gen::unit_rows(rng, 8, 5);
        const auto p = build_p_matrix(z, with_perplexity(4.0));
        const auto ref = oracle::symmetric_sne(oracle::to_mat(z), p.kappas());
        for (int i = 0; i < 8; ++i) {
            for (int j = 0; j < 8; ++j) CHECK(std::abs(p.probs(i, j) - ref[i][j]) < 1e-8);
            CHECK(std::abs(p.rows[static_cast<std::size_t>(i)].entropy_bits - 2.0) <= 1e-4);
        }
    }
    SUBCASE("too few rows or too much perplexity") {
        CHECK_THROWS_AS(build_p_matrix(polygon(2), with_perplexity(2.0)), ContractError);
        CHECK_THROWS_AS(build_p_matrix(polygon(4), with_perplexity(3.5)), ContractError);
    }
}

TEST_CASE("Q matrix") {
    SUBCASE("two antipodal pairs have a closed form") {
        const RowMatrixXd z = polygon(4);
        const double tau = 0.5;
        const auto q = build_q_matrix(z, tau);
        const double e = std::exp(-1.0 / tau);
        const double near = 1.0 / (e + 2.0) / 4.0;
        const double far = e / (e + 2.0) / 4.0;
        for (int i = 0; i < 4; ++i) {
            for (int j = 0; j < 4; ++j) {
                if (i == j) {
                    CHECK(q.probs(i, j) == 0.0);
                } else {
                    const double want = (i + 2) % 4 == j ? far : near;
                    CHECK(q.probs(i, j) == doctest::Approx(want).epsilon(1e-12));
                }
            }
        }
    }
    SUBCASE("huge tau approaches the uniform off-diagonal distribution") {
        Rng rng(2);
        const auto q = build_q_matrix(gen::unit_rows(rng, 6, 3), 1e6);
        for (int i = 0; i < 6; ++i) {
            for (int j = 0; j < 6; ++j) {
                if (i != j) CHECK(q.probs(i, j) == doctest::Approx(1.0 / 30.0).epsilon(1e-5));
            }
        }
    }
}

TEST_CASE("kl_loss") {
    Rng rng(6);
    const RowMatrixXd z = gen::unit_rows(rng, 5, 3);
    const auto p = build_p_matrix(z, with_perplexity(2.5));

    SUBCASE("P equal to Q gives zero") {
        QMatrix q;
        q.probs = p.probs;
        CHECK(kl_loss(p, q) == doctest::Approx(0.0).scale(1.0));
    }
    SUBCASE("P different from Q is positive and matches a direct sum") {
        const auto q = build_q_matrix(gen::unit_rows(rng, 5, 3), 0.3);
        const double kl = kl_loss(p, q);
        CHECK(kl > 0.0);
        CHECK(std::abs(kl - oracle::kl(oracle::to_mat(p.probs), oracle::to_mat(q.probs))) < 1e-10);
    }
    SUBCASE("q = 0 under positive p is a numeric error") {
        QMatrix q;
        q.probs = p.probs;
        q.probs(0, 1) = 0.0;
        CHECK_THROWS_AS(kl_loss(p, q), NumericError);
    }
}

TEST_CASE("vmfsne_objective gradients") {
    Rng rng(77);
    for (int i = 0; i < 10; ++i) {
        const auto r = cases::vmfsne_instance(rng);
        CHECK(r.fd_error < 1e-4);
        CHECK(r.loss_error < 1e-10);
    }
}

TEST_CASE("pretrain_vmfsne") {
    auto spec = MixtureSpec::balanced(4, 24, 8);
    spec.seed = 5;
    const auto ds = gen_mixture(spec);
    VmfSneConfig cfg;
    cfg.perplexity = 8.0;
    cfg.batch_size = 16;
    cfg.epochs = 12;
    cfg.warmup_epochs = 2;
    cfg.knn.k = 5;

    SUBCASE("seeded runs are identical") {
        cfg.epochs = 2;
        Rng a(1);
        Rng b(1);
        Rng ia(3);
        Rng ib(3);
        const auto ra = pretrain_vmfsne(ds, init_head<float>(8, 12, 6, ia), cfg, a);
        const auto rb = pretrain_vmfsne(ds, init_head<float>(8, 12, 6, ib), cfg, b);
        CHECK(ra.head == rb.head);
        REQUIRE(ra.history.size() == 2);
        CHECK(ra.history[0].epoch == 0);
        CHECK(ra.history[0].kl == rb.history[0].kl);
        CHECK_FALSE(ra.history[0].knn_acc.has_value());
    }
    SUBCASE("KL goes down and kNN is reported with an eval split") {
        Rng rng(4);
        Rng init(4);
        const auto r = pretrain_vmfsne(ds, init_head<float>(8, 12, 6, init), cfg, rng, &ds);
        REQUIRE(r.history.size() == 12);
        CHECK(r.history.back().kl < r.history.front().kl);
        REQUIRE(r.history.back().knn_acc.has_value());
        CHECK(*r.history.back().knn_acc >= 0.0);
    }
    SUBCASE("batch larger than the dataset is rejected") {
        cfg.batch_size = 200;
        Rng rng(1);
        CHECK_THROWS_AS(pretrain_vmfsne(ds, init_head<float>(8, 12, 6, rng), cfg, rng), ContractError);
    }
}

}
