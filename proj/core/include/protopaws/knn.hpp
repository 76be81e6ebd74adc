#pragma once

#include "protopaws/embedding_store.hpp"
#include "protopaws/nn.hpp"
#include "protopaws/types.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace protopaws {

struct KnnConfig {
    std::size_t k = 200;
    double tau = 0.1;

    void validate() const;
};

/**
 * Weighted kNN vote from a row of cosine similarities to the training set.
 *
 * The k most similar training points (ties broken by lower index) each add
 * exp(sim / tau) to the score of their label; scores are normalised to sum to
 * one. k is clamped to the training set size.
 */
std::vector<double> knn_vote(std::span<const double> sims, std::span<const ClassId> train_labels,
                             std::size_t n_classes, const KnnConfig& cfg);

/// Class probabilities for one unit-norm query against unit-norm training rows.
template <typename Scalar>
std::vector<double> knn_predict(const RowMatrix<Scalar>& train_z, std::span<const ClassId> train_labels,
                                std::size_t n_classes, std::span<const Scalar> query, const KnnConfig& cfg);

/// Fraction of eval rows whose arg-max kNN class (lowest class on ties) equals its label.
template <typename Scalar>
double knn_accuracy(const RowMatrix<Scalar>& train_z, std::span<const ClassId> train_labels,
                    const RowMatrix<Scalar>& eval_z, std::span<const ClassId> eval_labels,
                    std::size_t n_classes, const KnnConfig& cfg);

/// kNN accuracy of canonical embeddings, or of their projection through `head`
/// when one is given. Both datasets need labels.
double evaluate_knn(const EmbeddingDataset& train, const EmbeddingDataset& eval, const KnnConfig& cfg,
                    const ProjectionHead<float>* head = nullptr);

/// Index of the largest entry; the lowest index wins ties.
std::size_t argmax(std::span<const double> values);

} // namespace protopaws
