#include "protopaws/proto_select.hpp"

#include "protopaws/errors.hpp"
#include "protopaws/parallel.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <numeric>
#include <set>

namespace protopaws {

double within_cluster_ss(const RowMatrixXd& x, const RowMatrixXd& centroids,
                         std::span<const std::uint32_t> assignments) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        total += (x.row(i) - centroids.row(assignments[static_cast<std::size_t>(i)])).squaredNorm();
    }
    return total;
}

namespace {

RowMatrixXd plus_plus_seed(const RowMatrixXd& x, std::size_t k, Rng& rng) {
    const Eigen::Index n = x.rows();
    RowMatrixXd centroids(static_cast<Eigen::Index>(k), x.cols());
    std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
    centroids.row(0) = x.row(first(rng));
    std::vector<double> d2(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) d2[static_cast<std::size_t>(i)] = (x.row(i) - centroids.row(0)).squaredNorm();
    for (std::size_t c = 1; c < k; ++c) {
        const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
        Eigen::Index pick = 0;
        if (total > 0.0) {
            std::discrete_distribution<Eigen::Index> dist(d2.begin(), d2.end());
            pick = dist(rng);
        } else {
            pick = first(rng);
        }
        centroids.row(static_cast<Eigen::Index>(c)) = x.row(pick);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double d = (x.row(i) - x.row(pick)).squaredNorm();
            auto& slot = d2[static_cast<std::size_t>(i)];
            slot = std::min(slot, d);
        }
    }
    return centroids;
}

// Returns true when any assignment changed.
bool assign(const RowMatrixXd& x, const RowMatrixXd& centroids, std::vector<std::uint32_t>& assignments) {
    bool changed = false;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        std::uint32_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
            const double d = (x.row(i) - centroids.row(c)).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = static_cast<std::uint32_t>(c);
            }
        }
        auto& slot = assignments[static_cast<std::size_t>(i)];
        if (slot != best) {
            slot = best;
            changed = true;
        }
    }
    return changed;
}

void update_centroids(const RowMatrixXd& x, RowMatrixXd& centroids, std::vector<std::uint32_t>& assignments) {
    const Eigen::Index k = centroids.rows();
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    RowMatrixXd sums = RowMatrixXd::Zero(k, x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const auto c = assignments[static_cast<std::size_t>(i)];
        sums.row(c) += x.row(i);
        ++counts[c];
    }
    for (Eigen::Index c = 0; c < k; ++c) {
        if (counts[static_cast<std::size_t>(c)] > 0) {
            centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
        }
    }
    for (Eigen::Index c = 0; c < k; ++c) {
        if (counts[static_cast<std::size_t>(c)] > 0) continue;
        // reseed with the farthest point among clusters that can spare one
        Eigen::Index far = -1;
        double far_d = -1.0;
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const auto owner = assignments[static_cast<std::size_t>(i)];
            if (counts[owner] < 2) continue;
            const double d = (x.row(i) - centroids.row(owner)).squaredNorm();
            if (d > far_d) {
                far_d = d;
                far = i;
            }
        }
        if (far < 0) continue;
        --counts[assignments[static_cast<std::size_t>(far)]];
        assignments[static_cast<std::size_t>(far)] = static_cast<std::uint32_t>(c);
        counts[static_cast<std::size_t>(c)] = 1;
        centroids.row(c) = x.row(far);
    }
}

// Lowest index first among equal scores.
std::vector<std::size_t> rank_descending(std::span<const double> scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

RowMatrixXd canonical_as_double(const EmbeddingDataset& ds) { return ds.canonical_matrix().cast<double>(); }

} // namespace

KMeansResult lloyd_kmeans(const RowMatrixXd& x, std::size_t k, int n_init, int max_iter, Rng& rng) {
    const auto n = static_cast<std::size_t>(x.rows());
    require(k >= 1, "lloyd_kmeans: k must be >= 1");
    require(k <= n, "lloyd_kmeans: k exceeds the number of points");
    require(n_init >= 1 && max_iter >= 1, "lloyd_kmeans: n_init and max_iter must be >= 1");
    require(x.allFinite(), "lloyd_kmeans: non-finite input");

    KMeansResult best;
    best.wcss = std::numeric_limits<double>::infinity();
    for (int run = 0; run < n_init; ++run) {
        KMeansResult cur;
        cur.centroids = plus_plus_seed(x, k, rng);
        cur.assignments.assign(n, 0);
        assign(x, cur.centroids, cur.assignments);
        cur.initial_wcss = within_cluster_ss(x, cur.centroids, cur.assignments);
        double prev = cur.initial_wcss;
        for (int it = 0; it < max_iter; ++it) {
            update_centroids(x, cur.centroids, cur.assignments);
            const double w = within_cluster_ss(x, cur.centroids, cur.assignments);
            if (w > prev * (1.0 + 1e-12) + 1e-12) {
                throw NumericError("lloyd_kmeans: WCSS increased during an iteration");
            }
            cur.wcss_trace.push_back(w);
            prev = w;
            if (!assign(x, cur.centroids, cur.assignments)) break;
            const double after_assign = within_cluster_ss(x, cur.centroids, cur.assignments);
            if (after_assign > prev * (1.0 + 1e-12) + 1e-12) {
                throw NumericError("lloyd_kmeans: WCSS increased during assignment");
            }
            prev = after_assign;
        }
        cur.wcss = within_cluster_ss(x, cur.centroids, cur.assignments);
        if (cur.wcss < best.wcss) best = std::move(cur);
    }
    return best;
}

std::vector<std::uint32_t> simple_kmeans_select(const EmbeddingDataset& ds, std::size_t budget, Rng& rng,
                                                int n_init, int max_iter) {
    require(budget <= ds.n_items, "simple_kmeans_select: budget exceeds dataset size");
    if (budget == 0) return {};
    const RowMatrixXd x = canonical_as_double(ds);
    const KMeansResult km = lloyd_kmeans(x, budget, n_init, max_iter, rng);

    std::vector<char> taken(ds.n_items, 0);
    std::vector<std::uint32_t> out;
    out.reserve(budget);
    for (Eigen::Index c = 0; c < km.centroids.rows(); ++c) {
        // unit rows: ranking by x . mu equals ranking by cosine similarity to mu
        const Vector<double> score = x * km.centroids.row(c).transpose();
        const auto order = rank_descending({score.data(), static_cast<std::size_t>(score.size())});
        for (std::size_t i : order) {
            if (!taken[i]) {
                taken[i] = 1;
                out.push_back(static_cast<std::uint32_t>(i));
                break;
            }
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<double> knn_density(const RowMatrixXd& x, std::size_t k) {
    const auto n = static_cast<std::size_t>(x.rows());
    std::vector<double> density(n, 1.0);
    if (n < 2) return density;
    k = std::clamp<std::size_t>(k, 1, n - 1);
    const RowMatrixXd sims = x * x.transpose();
    parallel_for(n, [&](std::size_t i) {
        std::vector<double> dist;
        dist.reserve(n - 1);
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) dist.push_back(1.0 - sims(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
        }
        std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
        const double mean = std::accumulate(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), 0.0) /
                            static_cast<double>(k);
        density[i] = 1.0 / std::max(mean, 1e-12);
    });
    return density;
}

std::vector<std::uint32_t> usl_lite_select(const EmbeddingDataset& ds, std::size_t budget,
                                           const UslLiteConfig& cfg, Rng& rng) {
    require(budget <= ds.n_items, "usl_lite_select: budget exceeds dataset size");
    require(cfg.lambda >= 0.0 && cfg.reg_iters >= 0, "usl_lite_select: invalid regularisation settings");
    if (budget == 0) return {};
    const RowMatrixXd x = canonical_as_double(ds);
    const KMeansResult km = lloyd_kmeans(x, budget, cfg.n_init, cfg.max_iter, rng);
    const std::vector<double> density = knn_density(x, cfg.k_density);

    std::vector<std::vector<std::uint32_t>> members(budget);
    for (std::uint32_t i = 0; i < ds.n_items; ++i) members[km.assignments[i]].push_back(i);

    std::vector<std::int64_t> chosen(budget, -1);
    for (std::size_t c = 0; c < budget; ++c) {
        for (std::uint32_t i : members[c]) {
            if (chosen[c] < 0 || density[i] > density[static_cast<std::size_t>(chosen[c])]) chosen[c] = i;
        }
    }

    for (int round = 0; round < cfg.reg_iters; ++round) {
        for (std::size_t c = 0; c < budget; ++c) {
            if (members[c].empty()) continue;
            double best_u = -std::numeric_limits<double>::infinity();
            std::int64_t best_i = chosen[c];
            for (std::uint32_t i : members[c]) {
                double penalty = 0.0;
                for (std::size_t o = 0; o < budget; ++o) {
                    if (o == c || chosen[o] < 0) continue;
                    const double dist = 1.0 - x.row(i).dot(x.row(chosen[o]));
                    penalty += 1.0 / std::max(dist, 1e-12);
                }
                const double u = density[i] - cfg.lambda * penalty;
                if (u > best_u) {
                    best_u = u;
                    best_i = i;
                }
            }
            chosen[c] = best_i;
        }
    }

    std::set<std::uint32_t> picked;
    for (std::int64_t i : chosen) {
        if (i >= 0) picked.insert(static_cast<std::uint32_t>(i));
    }
    // empty clusters cannot survive reseeding unless points coincide; top up by density
    if (picked.size() < budget) {
        for (std::size_t i : rank_descending(density)) {
            if (picked.size() == budget) break;
            picked.insert(static_cast<std::uint32_t>(i));
        }
    }
    return {picked.begin(), picked.end()};
}

std::vector<std::uint32_t> random_select(const EmbeddingDataset& ds, std::size_t budget, RandomMode mode, Rng& rng) {
    require(budget <= ds.n_items, "random_select: budget exceeds dataset size");
    std::vector<std::uint32_t> out;
    if (mode == RandomMode::uniform) {
        std::vector<std::uint32_t> all(ds.n_items);
        std::iota(all.begin(), all.end(), 0u);
        std::shuffle(all.begin(), all.end(), rng);
        out.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(budget));
    } else {
        require(ds.has_labels() && ds.n_classes > 0, "random_select: stratified mode needs labels");
        require(budget % ds.n_classes == 0, "random_select: budget not divisible by the number of classes");
        const std::size_t per_class = budget / ds.n_classes;
        std::vector<std::vector<std::uint32_t>> by_class(ds.n_classes);
        for (std::uint32_t i = 0; i < ds.n_items; ++i) by_class[static_cast<std::size_t>((*ds.labels)[i])].push_back(i);
        for (auto& members : by_class) {
            require(members.size() >= per_class, "random_select: a class has fewer items than requested");
            std::shuffle(members.begin(), members.end(), rng);
            out.insert(out.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(per_class));
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::size_t class_coverage(std::span<const std::uint32_t> indices, std::span<const ClassId> labels) {
    std::set<ClassId> classes;
    for (std::uint32_t i : indices) {
        require(i < labels.size(), "class_coverage: index out of range");
        classes.insert(labels[i]);
    }
    return classes.size();
}

SelectionMethod parse_selection_method(std::string_view name) {
    if (name == "kmeans") return SelectionMethod::kmeans;
    if (name == "usl-lite") return SelectionMethod::usl_lite;
    if (name == "random") return SelectionMethod::random;
    if (name == "random-stratified") return SelectionMethod::random_stratified;
    throw ConfigError("unknown selection method '" + std::string(name) +
                      "' (expected kmeans|usl-lite|random|random-stratified)");
}

std::string_view to_string(SelectionMethod method) {
    switch (method) {
    case SelectionMethod::kmeans: return "kmeans";
    case SelectionMethod::usl_lite: return "usl-lite";
    case SelectionMethod::random: return "random";
    case SelectionMethod::random_stratified: return "random-stratified";
    }
    return "unknown";
}

std::vector<std::uint32_t> select_prototypes(const EmbeddingDataset& ds, SelectionMethod method, std::size_t budget,
                                             Rng& rng, const UslLiteConfig& usl) {
    switch (method) {
    case SelectionMethod::kmeans: return simple_kmeans_select(ds, budget, rng, usl.n_init, usl.max_iter);
    case SelectionMethod::usl_lite: return usl_lite_select(ds, budget, usl, rng);
    case SelectionMethod::random: return random_select(ds, budget, RandomMode::uniform, rng);
    case SelectionMethod::random_stratified: return random_select(ds, budget, RandomMode::class_stratified, rng);
    }
    throw ContractError("select_prototypes: unknown method");
}

std::vector<CoverageSummary> coverage_bench(const EmbeddingDataset& ds, std::size_t budget,
                                            std::span<const std::uint64_t> seeds,
                                            std::span<const SelectionMethod> methods, const UslLiteConfig& usl) {
    require(ds.has_labels(), "coverage_bench: dataset has no labels");
    require(!seeds.empty(), "coverage_bench: no seeds");
    std::vector<CoverageSummary> out;
    for (SelectionMethod method : methods) {
        CoverageSummary summary;
        summary.method = std::string(to_string(method));
        summary.min = std::numeric_limits<std::size_t>::max();
        double total = 0.0;
        std::size_t all = 0;
        for (std::uint64_t seed : seeds) {
            Rng rng(seed);
            SelectionReport report;
            report.method = summary.method;
            report.budget = budget;
            report.seed = seed;
            report.indices = select_prototypes(ds, method, budget, rng, usl);
            report.classes_covered = class_coverage(report.indices, *ds.labels);
            total += static_cast<double>(report.classes_covered);
            summary.min = std::min(summary.min, report.classes_covered);
            summary.max = std::max(summary.max, report.classes_covered);
            if (report.classes_covered == ds.n_classes) ++all;
            summary.runs.push_back(std::move(report));
        }
        summary.mean = total / static_cast<double>(seeds.size());
        summary.fraction_all_classes = static_cast<double>(all) / static_cast<double>(seeds.size());
        out.push_back(std::move(summary));
    }
    return out;
}

} // namespace protopaws
