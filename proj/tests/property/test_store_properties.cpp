#include "doctest.h"
#include "generators.hpp"

#include "protopaws/embedding_store.hpp"

#include <filesystem>

using namespace protopaws;

TEST_SUITE("embedding-store") {

TEST_CASE("save/load round-trip is bit-exact on random datasets") {
    const auto dir = std::filesystem::temp_directory_path() / "protopaws_prop_store";
    std::filesystem::create_directories(dir);
    Rng rng(1001);
    for (int trial = 0; trial < 40; ++trial) {
        CAPTURE(trial);
        const auto ds = gen::dataset(rng, gen::uniform_int(rng, 0, 30), gen::uniform_int(rng, 2, 12),
                                     gen::uniform_int(rng, 1, 4), gen::uniform_int(rng, 0, 5),
                                     gen::uniform_int(rng, 0, 1) ? gen::uniform_int(rng, 1, 6) : 0);
        const auto path = dir / ("rt" + std::to_string(trial) + ".emb");
        save_dataset(ds, path);
        const auto back = load_dataset(path);
        CHECK(back == ds);
    }
}

TEST_CASE("loaded rows are unit norm even after arbitrary scaling") {
    Rng rng(1002);
    for (int trial = 0; trial < 40; ++trial) {
        const auto dim = static_cast<std::size_t>(gen::uniform_int(rng, 2, 20));
        const auto rows = static_cast<std::size_t>(gen::uniform_int(rng, 1, 10));
        std::vector<float> v(rows * dim);
        for (auto& x : v) x = static_cast<float>(gen::normal(rng) * std::pow(10.0, gen::uniform(rng, -3, 3)));
        normalize_rows(v, dim, "prop");
        for (std::size_t r = 0; r < rows; ++r) {
            double n = 0.0;
            for (std::size_t k = 0; k < dim; ++k) n += double(v[r * dim + k]) * v[r * dim + k];
            CHECK(std::abs(std::sqrt(n) - 1.0) < 1e-5);
        }
    }
}

TEST_CASE("equal seeds give equal view batches") {
    Rng rng(1003);
    for (int trial = 0; trial < 30; ++trial) {
        const auto ds = gen::dataset(rng, 12, 4, gen::uniform_int(rng, 1, 4), gen::uniform_int(rng, 0, 4), 0);
        std::vector<std::uint32_t> idx;
        for (int i = 0; i < 5; ++i) idx.push_back(static_cast<std::uint32_t>(gen::uniform_int(rng, 0, 11)));
        const auto n_local = static_cast<std::uint32_t>(gen::uniform_int(rng, 0, static_cast<int>(ds.n_local)));
        const auto seed = rng();
        Rng a(seed);
        Rng b(seed);
        const auto ba = sample_view_batch(ds, idx, n_local, a);
        const auto bb = sample_view_batch(ds, idx, n_local, b);
        CHECK(ba.global_matrix(0) == bb.global_matrix(0));
        CHECK(ba.global_matrix(1) == bb.global_matrix(1));
        CHECK(ba.local == bb.local);
    }
}

TEST_CASE("stratified split preserves every label exactly once") {
    Rng rng(1004);
    for (int trial = 0; trial < 30; ++trial) {
        const auto classes = static_cast<std::uint32_t>(gen::uniform_int(rng, 1, 5));
        const auto ds = gen::dataset(rng, gen::uniform_int(rng, 1, 60), 3, 1, 0, classes);
        const auto [train, eval] = split_stratified(ds, gen::uniform(rng, 0.0, 0.9), rng);
        CHECK(train.n_items + eval.n_items == ds.n_items);
        for (ClassId c = 0; c < static_cast<ClassId>(classes); ++c) {
            const auto total = std::count(ds.labels->begin(), ds.labels->end(), c);
            CHECK(std::count(train.labels->begin(), train.labels->end(), c) +
                      std::count(eval.labels->begin(), eval.labels->end(), c) ==
                  total);
        }
    }
}

}
