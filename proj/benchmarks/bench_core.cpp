#include "protopaws/knn.hpp"
#include "protopaws/nn.hpp"
#include "protopaws/paws.hpp"
#include "protopaws/proto_select.hpp"
#include "protopaws/synth.hpp"
#include "protopaws/vmf_sne.hpp"

#include <benchmark/benchmark.h>

using namespace protopaws;

namespace {

RowMatrixXf unit_rows(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    std::normal_distribution<float> n(0.0f, 1.0f);
    RowMatrixXf m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    m.rowwise().normalize();
    return m;
}

void BM_Forward(benchmark::State& state) {
    Rng rng(1);
    const auto head = init_head<float>(384, 384, 512, rng);
    const RowMatrixXf x = unit_rows(state.range(0), 384, rng);
    for (auto _ : state) benchmark::DoNotOptimize(forward_project(head, x));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(64)->Arg(512);

void BM_ForwardBackward(benchmark::State& state) {
    Rng rng(2);
    const auto head = init_head<float>(384, 384, 512, rng);
    const RowMatrixXf x = unit_rows(state.range(0), 384, rng);
    const RowMatrixXf up = unit_rows(state.range(0), 512, rng);
    for (auto _ : state) benchmark::DoNotOptimize(backward_gradients(head, x, up));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardBackward)->Arg(64)->Arg(512);

void BM_PMatrix(benchmark::State& state) {
    Rng rng(3);
    const RowMatrixXd z = unit_rows(state.range(0), 64, rng).cast<double>();
    VmfSneConfig cfg;
    for (auto _ : state) benchmark::DoNotOptimize(build_p_matrix(z, cfg));
}
BENCHMARK(BM_PMatrix)->Arg(256)->Arg(1024);

void BM_VmfSneStep(benchmark::State& state) {
    Rng rng(4);
    const auto head = init_head<float>(64, 128, 64, rng);
    const RowMatrixXf x = unit_rows(state.range(0), 64, rng);
    const auto p = build_p_matrix(x.cast<double>(), VmfSneConfig{});
    for (auto _ : state) benchmark::DoNotOptimize(vmfsne_objective(head, x, p, 0.1));
}
BENCHMARK(BM_VmfSneStep)->Arg(256)->Arg(1024);

void BM_Knn(benchmark::State& state) {
    auto spec = MixtureSpec::balanced(10, static_cast<std::uint32_t>(state.range(0)) / 10, 64);
    spec.n_local = 0;
    const auto ds = gen_mixture(spec);
    KnnConfig cfg;
    for (auto _ : state) benchmark::DoNotOptimize(evaluate_knn(ds, ds, cfg));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Knn)->Arg(1000)->Arg(4000);

void BM_KMeans(benchmark::State& state) {
    Rng rng(5);
    const RowMatrixXd x = unit_rows(state.range(0), 64, rng).cast<double>();
    for (auto _ : state) benchmark::DoNotOptimize(lloyd_kmeans(x, 10, 10, 300, rng));
}
BENCHMARK(BM_KMeans)->Arg(550)->Arg(2000);

} // namespace
BENCHMARK_MAIN();
