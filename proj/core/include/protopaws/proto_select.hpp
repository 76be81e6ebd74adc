#pragma once

#include "protopaws/embedding_store.hpp"
#include "protopaws/types.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace protopaws {

struct KMeansResult {
    RowMatrixXd centroids;                 ///< k x d
    std::vector<std::uint32_t> assignments; ///< per point, in [0, k)
    double wcss = 0.0;                     ///< of the returned centroids/assignments
    std::vector<double> wcss_trace;        ///< per Lloyd iteration of the winning run
    double initial_wcss = 0.0;             ///< after seeding, winning run
};

/// Within-cluster sum of squared Euclidean distances.
double within_cluster_ss(const RowMatrixXd& x, const RowMatrixXd& centroids,
                         std::span<const std::uint32_t> assignments);

/**
 * Lloyd's algorithm with k-means++ seeding; best of `n_init` runs by WCSS.
 * Empty clusters are reseeded with the point farthest from its centroid.
 * Assignment ties go to the lowest cluster index.
 */
KMeansResult lloyd_kmeans(const RowMatrixXd& x, std::size_t k, int n_init, int max_iter, Rng& rng);

/// One item per k-means centroid (k = budget) over canonical embeddings: the
/// item with the largest cosine similarity that is not already taken.
std::vector<std::uint32_t> simple_kmeans_select(const EmbeddingDataset& ds, std::size_t budget, Rng& rng,
                                                int n_init = 10, int max_iter = 300);

struct UslLiteConfig {
    std::size_t k_density = 10;
    int reg_iters = 3;
    double lambda = 0.5;
    int n_init = 10;
    int max_iter = 300;
};

/// 1 / mean cosine distance to the k nearest other rows (ties to lower index).
std::vector<double> knn_density(const RowMatrixXd& x, std::size_t k);

/// Density-driven selection regularised by inverse cosine distance between picks.
std::vector<std::uint32_t> usl_lite_select(const EmbeddingDataset& ds, std::size_t budget,
                                           const UslLiteConfig& cfg, Rng& rng);

enum class RandomMode { uniform, class_stratified };

std::vector<std::uint32_t> random_select(const EmbeddingDataset& ds, std::size_t budget, RandomMode mode, Rng& rng);

std::size_t class_coverage(std::span<const std::uint32_t> indices, std::span<const ClassId> labels);

enum class SelectionMethod { kmeans, usl_lite, random, random_stratified };

SelectionMethod parse_selection_method(std::string_view name);
std::string_view to_string(SelectionMethod method);

/// Sorted, distinct indices chosen by `method`.
std::vector<std::uint32_t> select_prototypes(const EmbeddingDataset& ds, SelectionMethod method, std::size_t budget,
                                             Rng& rng, const UslLiteConfig& usl = {});

struct SelectionReport {
    std::string method;
    std::size_t budget = 0;
    std::uint64_t seed = 0;
    std::vector<std::uint32_t> indices;
    std::size_t classes_covered = 0;
};

struct CoverageSummary {
    std::string method;
    std::vector<SelectionReport> runs;
    double mean = 0.0;
    std::size_t min = 0;
    std::size_t max = 0;
    double fraction_all_classes = 0.0;
};

/// Class coverage of each method over the given seeds. Each (method, seed) run
/// gets its own generator seeded with `seed`.
std::vector<CoverageSummary> coverage_bench(const EmbeddingDataset& ds, std::size_t budget,
                                            std::span<const std::uint64_t> seeds,
                                            std::span<const SelectionMethod> methods, const UslLiteConfig& usl = {});

} // namespace protopaws
