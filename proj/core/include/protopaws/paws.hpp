#pragma once

#include "protopaws/embedding_store.hpp"
#include "protopaws/nn.hpp"
#include "protopaws/types.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace protopaws {

enum class LossMode {
    consistency, ///< cross-view sharpened targets
    pseudolabel, ///< jointly sharpened multi-view targets
};

LossMode parse_loss_mode(std::string_view name);
std::string_view to_string(LossMode mode);

struct PawsConfig {
    double tau = 0.1;        ///< prediction temperature
    double sharpen_t = 0.25; ///< sharpening temperature T
    LossMode loss_mode = LossMode::pseudolabel;
    bool me_max = true;
    double label_smoothing = 0.1;

    std::size_t support_per_class = 0; ///< 0 = every prototype of the class
    std::size_t classes_per_batch = 0; ///< 0 = every class
    std::size_t unlabelled_batch = 512;
    std::uint32_t n_local = 6;
    int epochs = 50;
    int warmup_epochs = 5;

    double start_lr = 0.3;
    double max_lr = 6.4;
    double final_lr = 0.064;
    LarsConfig lars;

    void validate() const;
};

/// Labelled support set: dataset item ids, their classes and smoothed targets.
struct PrototypeSet {
    std::vector<std::uint32_t> indices;
    std::vector<ClassId> labels;
    RowMatrixXd soft_labels; ///< |indices| x n_classes
    std::size_t n_classes = 0;

    std::size_t size() const noexcept { return indices.size(); }
};

/// Rows (1 - eps) * onehot(label) + eps / n_classes.
RowMatrixXd smooth_labels(std::span<const ClassId> labels, std::size_t n_classes, double eps);

/// Requires distinct, labelled item ids.
PrototypeSet make_prototype_set(const EmbeddingDataset& ds, std::span<const std::uint32_t> indices,
                                double label_smoothing);

/// softmax(zq zs^T / tau) * ys, one probability row per query.
RowMatrixXd predict_classes(const RowMatrixXd& zq, const RowMatrixXd& zs, const RowMatrixXd& ys, double tau);

struct PredictionGradients {
    RowMatrixXd d_query;
    RowMatrixXd d_support;
};

/// Pulls dLoss/dProbs of predict_classes back to the query and support rows.
PredictionGradients predict_classes_backward(const RowMatrixXd& zq, const RowMatrixXd& zs, const RowMatrixXd& ys,
                                             double tau, const RowMatrixXd& d_probs);

/// p_i^(1/T) / sum_j p_j^(1/T)
std::vector<double> sharpen(std::span<const double> p, double t);

/// (p1_i p2_i)^(1/2T) normalised. Throws NumericError when the supports are disjoint.
std::vector<double> joint_sharpen(std::span<const double> p1, std::span<const double> p2, double t);

struct PawsLoss {
    double loss = 0.0;
    double cross_entropy = 0.0;
    double me_max = 0.0; ///< -H(mean sharpened prediction); 0 when disabled
    RowMatrixXd grad_g1;
    RowMatrixXd grad_g2;
    std::vector<RowMatrixXd> grad_local;
};

/**
 * PAWS objective over predicted class probabilities of two global views and
 * optional local views (each b x C).
 *
 * Targets are constants. Consistency mode uses sharpen(p2) for view 1,
 * sharpen(p1) for view 2 and their mean for local views; pseudolabel mode uses
 * joint_sharpen(p1, p2) for every view. The cross-entropy is averaged over all
 * (2 + L) * b anchor rows. The me-max term is -H(mean of sharpen(p)) over the
 * same anchor rows, with gradient flowing through the anchors.
 */
PawsLoss paws_loss(const RowMatrixXd& p1, const RowMatrixXd& p2, std::span<const RowMatrixXd> local,
                   const PawsConfig& cfg);

/// Positions into `protos`: classes_per_batch classes (0 = all n_classes), then
/// per_class prototypes of each (0 = all), drawn with replacement only when a
/// class has fewer than per_class prototypes.
std::vector<std::size_t> stratified_batch(const PrototypeSet& protos, std::size_t per_class,
                                          std::size_t classes_per_batch, Rng& rng);

/// PAWS loss through the head for one step. Support rows receive gradient too.
template <typename Scalar>
LossAndGradients<Scalar> paws_objective(const ProjectionHead<Scalar>& head, const RowMatrix<Scalar>& global1,
                                        const RowMatrix<Scalar>& global2, std::span<const RowMatrix<Scalar>> local,
                                        const RowMatrix<Scalar>& support, const RowMatrixXd& support_targets,
                                        const PawsConfig& cfg);

/// Accuracy of the prototype classifier on `eval` canonical embeddings, using
/// every prototype's canonical embedding from `ds`.
double prototype_accuracy(const EmbeddingDataset& ds, const PrototypeSet& protos, const EmbeddingDataset& eval,
                          const ProjectionHead<float>& head, double tau);

struct PawsEpoch {
    int epoch = 0;
    double loss = 0.0;
    double val_acc = 0.0;
};

struct PawsResult {
    ProjectionHead<float> head;
    std::vector<PawsEpoch> history;
    double initial_val_acc = 0.0;
};

/// Semi-supervised training; validation uses `eval`, or `ds` itself when null.
PawsResult train_paws(const EmbeddingDataset& ds, const PrototypeSet& protos, ProjectionHead<float> head,
                      const PawsConfig& cfg, Rng& rng, const EmbeddingDataset* eval = nullptr);

} // namespace protopaws
