#pragma once

#include "protopaws/types.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace protopaws {

/**
 * In-memory multi-view embedding dataset.
 *
 * Every item has one canonical unit vector plus a pool of `n_global` global-view
 * and `n_local` local-view unit vectors, all of dimension `dim`. Storage is
 * item-major, view-major, component-minor, which is also the on-disk order of
 * the EMB1 format.
 */
struct EmbeddingDataset {
    std::uint32_t n_items = 0;
    std::uint32_t dim = 0;
    std::uint32_t n_global = 1;
    std::uint32_t n_local = 0;
    std::uint32_t n_classes = 0;
    std::optional<std::vector<ClassId>> labels;

    std::vector<float> canonical;    ///< n_items * dim
    std::vector<float> global_views; ///< n_items * n_global * dim
    std::vector<float> local_views;  ///< n_items * n_local * dim

    bool has_labels() const noexcept { return labels.has_value(); }

    std::span<const float> canonical_row(std::size_t item) const;
    std::span<const float> global_view(std::size_t item, std::size_t slot) const;
    std::span<const float> local_view(std::size_t item, std::size_t slot) const;

    /// Canonical embeddings as an n_items x dim matrix.
    RowMatrixXf canonical_matrix() const;

    /// Throws FormatError naming the first violated invariant.
    void validate() const;

    bool operator==(const EmbeddingDataset&) const = default;
};

/// Two global views and `n_local` local views for each requested item.
struct ViewBatch {
    std::vector<std::uint32_t> item_indices;
    std::uint32_t dim = 0;
    std::uint32_t n_local = 0;
    std::vector<float> global; ///< b * 2 * dim
    std::vector<float> local;  ///< b * n_local * dim

    std::size_t size() const noexcept { return item_indices.size(); }

    /// Rows for global view `which` (0 or 1) of every item, as a b x dim matrix.
    RowMatrixXf global_matrix(std::size_t which) const;
    /// Rows for local view `which` of every item, as a b x dim matrix.
    RowMatrixXf local_matrix(std::size_t which) const;
};

/// Optional JSON sidecar stored next to an EMB1 file as `<path>.json`.
struct DatasetManifest {
    std::vector<std::string> class_names;
    std::string source;
};

EmbeddingDataset load_dataset(const std::filesystem::path& path);
void save_dataset(const EmbeddingDataset& ds, const std::filesystem::path& path);

std::filesystem::path manifest_path(const std::filesystem::path& dataset_path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& dataset_path);
std::optional<DatasetManifest> load_manifest(const std::filesystem::path& dataset_path);

/// Draws views for `indices`. Two distinct global slots when n_global >= 2,
/// otherwise the single global view twice; `n_local` distinct local slots.
ViewBatch sample_view_batch(const EmbeddingDataset& ds, std::span<const std::uint32_t> indices,
                            std::uint32_t n_local, Rng& rng);

/// Copies the listed items (in order) into a new dataset.
EmbeddingDataset subset(const EmbeddingDataset& ds, std::span<const std::uint32_t> indices);

/// Per-class split keeping floor(eval_fraction * class size) items of every class
/// for evaluation. Requires labels.
std::pair<EmbeddingDataset, EmbeddingDataset> split_stratified(const EmbeddingDataset& ds,
                                                               double eval_fraction, Rng& rng);

/// Rescales each `dim`-sized row of `values` to unit norm when it deviates from
/// unit norm by more than 1e-6. Throws FormatError on zero or non-finite rows.
void normalize_rows(std::span<float> values, std::size_t dim, const char* block_name);

} // namespace protopaws
