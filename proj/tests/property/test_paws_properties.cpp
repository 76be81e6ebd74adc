#include "doctest.h"
#include "generators.hpp"
#include "gradient_cases.hpp"

#include "protopaws/paws.hpp"

#include <algorithm>
#include <numeric>

using namespace protopaws;

TEST_SUITE("paws-train") {

TEST_CASE("predictions lie on the simplex and ignore prototype order") {
    Rng rng(4001);
    for (int trial = 0; trial < 50; ++trial) {
        const int m = gen::uniform_int(rng, 1, 10);
        const int c = gen::uniform_int(rng, 2, 6);
        const int d = gen::uniform_int(rng, 2, 8);
        const RowMatrixXd zs = gen::unit_rows(rng, m, d);
        const RowMatrixXd ys = gen::simplex_rows(rng, m, c);
        const RowMatrixXd zq = gen::unit_rows(rng, 4, d);
        const double tau = gen::uniform(rng, 0.05, 1.0);
        const RowMatrixXd p = predict_classes(zq, zs, ys, tau);
        CHECK(p.minCoeff() >= 0.0);
        for (int i = 0; i < 4; ++i) CHECK(p.row(i).sum() == doctest::Approx(1.0));

        std::vector<int> perm(static_cast<std::size_t>(m));
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        RowMatrixXd zs2(m, d);
        RowMatrixXd ys2(m, c);
        for (int j = 0; j < m; ++j) {
            zs2.row(j) = zs.row(perm[static_cast<std::size_t>(j)]);
            ys2.row(j) = ys.row(perm[static_cast<std::size_t>(j)]);
        }
        CHECK((predict_classes(zq, zs2, ys2, tau) - p).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("sharpening keeps the argmax, raises the max and fixes uniform and one-hot") {
    Rng rng(4002);
    for (int trial = 0; trial < 200; ++trial) {
        const auto n = static_cast<std::size_t>(gen::uniform_int(rng, 2, 10));
        const auto p = gen::simplex(rng, n, trial % 3 == 0);
        const double t = gen::uniform(rng, 0.05, 0.99);
        const auto s = sharpen(p, t);
        const auto am = std::max_element(p.begin(), p.end()) - p.begin();
        CHECK(std::max_element(s.begin(), s.end()) - s.begin() == am);
        CHECK(s[static_cast<std::size_t>(am)] >= p[static_cast<std::size_t>(am)] - 1e-12);
        CHECK(std::accumulate(s.begin(), s.end(), 0.0) == doctest::Approx(1.0));

        const auto j = joint_sharpen(p, p, t);
        for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(j[i] - s[i]) < 1e-12);

        const std::vector<double> u(n, 1.0 / static_cast<double>(n));
        for (double v : sharpen(u, t)) CHECK(v == doctest::Approx(u[0]));
        std::vector<double> one_hot(n, 0.0);
        one_hot[n / 2] = 1.0;
        CHECK(sharpen(one_hot, t) == one_hot);
    }
}

TEST_CASE("joint targets are non-uniform whenever the product is non-constant") {
    Rng rng(4003);
    for (int trial = 0; trial < 200; ++trial) {
        const auto n = static_cast<std::size_t>(gen::uniform_int(rng, 2, 10));
        const auto p1 = gen::simplex(rng, n);
        const auto p2 = gen::simplex(rng, n);
        const auto j = joint_sharpen(p1, p2, gen::uniform(rng, 0.1, 1.0));
        const auto [lo, hi] = std::minmax_element(j.begin(), j.end());
        CHECK(*hi - *lo > 0.0);
    }
}

TEST_CASE("PAWS objective gradients pass central differences in both modes") {
    Rng rng(4004);
    for (auto mode : {LossMode::consistency, LossMode::pseudolabel}) {
        double worst = 0.0;
        for (int trial = 0; trial < 100; ++trial) {
            const auto r = cases::paws_instance(rng, mode);
            worst = std::max(worst, r.fd_error);
            CHECK(r.loss_error < 1e-9);
        }
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("loss gradients on predicted probabilities pass central differences") {
    Rng rng(4005);
    for (auto mode : {LossMode::consistency, LossMode::pseudolabel}) {
        for (int trial = 0; trial < 30; ++trial) {
            const int n = gen::uniform_int(rng, 1, 3);
            const int c = gen::uniform_int(rng, 2, 4);
            RowMatrixXd p1 = gen::simplex_rows(rng, n, c);
            const RowMatrixXd p2 = gen::simplex_rows(rng, n, c);
            PawsConfig cfg;
            cfg.loss_mode = mode;
            cfg.me_max = trial % 2 == 0;
            const auto base = paws_loss(p1, p2, {}, cfg);
            // targets are constants: freeze them by perturbing only the anchor term
            const auto oracle_p1 = oracle::to_mat(p1);
            const auto oracle_p2 = oracle::to_mat(p2);
            const auto tg = oracle::paws_targets(oracle_p1, oracle_p2, mode == LossMode::pseudolabel, cfg.sharpen_t);
            const double h = 1e-6;
            for (int i = 0; i < n; ++i) {
                for (int k = 0; k < c; ++k) {
                    auto up = oracle_p1;
                    auto down = oracle_p1;
                    up[i][k] += h;
                    down[i][k] -= h;
                    const double fd = (oracle::paws_loss(up, oracle_p2, {}, tg, cfg.sharpen_t, cfg.me_max) -
                                       oracle::paws_loss(down, oracle_p2, {}, tg, cfg.sharpen_t, cfg.me_max)) /
                                      (2 * h);
                    CHECK(oracle::relative_error(base.grad_g1(i, k), fd) < 1e-4);
                }
            }
        }
    }
}

}
