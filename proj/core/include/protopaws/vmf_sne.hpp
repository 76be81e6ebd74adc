#pragma once

#include "protopaws/embedding_store.hpp"
#include "protopaws/knn.hpp"
#include "protopaws/nn.hpp"
#include "protopaws/types.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace protopaws {

/**
 * Parametric vMF-SNE settings.
 *
 * `batch_size` counts items per step; every item contributes its two sampled
 * global views as independent points, so P and Q are (2*batch_size)^2 (or
 * batch_size^2 when the dataset has a single global view).
 */
struct VmfSneConfig {
    double perplexity = 30.0;
    double tau = 0.1;
    std::size_t batch_size = 512;
    int epochs = 50;
    int warmup_epochs = 5;

    double entropy_tolerance = 1e-4; ///< bits
    int max_iterations = 64;
    double kappa_min = 1e-2;
    double kappa_max = 1e6;

    double start_lr = 0.3;
    double max_lr = 6.4;
    double final_lr = 0.064;
    LarsConfig lars;

    KnnConfig knn;

    void validate() const;
};

struct KappaResult {
    double kappa = 0.0;
    double entropy_bits = 0.0; ///< entropy achieved at `kappa`
    bool degenerate = false;   ///< all similarities equal, entropy independent of kappa
    bool clamped = false;      ///< target not reachable inside the (expanded) bracket
    int iterations = 0;
};

/// Shannon entropy in bits of p_j ~ exp(kappa * sims_j).
double vmf_row_entropy_bits(std::span<const double> sims, double kappa);

/**
 * Bisection for the concentration whose conditional neighbour distribution has
 * the target entropy. Entropy decreases monotonically in kappa. The upper end
 * of the bracket grows x10 (up to 1e6 times kappa_max) until it straddles the
 * target; a target above the entropy at kappa_min returns kappa_min.
 */
KappaResult bisect_kappa(std::span<const double> sims, double target_entropy_bits, const VmfSneConfig& cfg);

/// Symmetrised neighbour distribution over a batch.
struct PMatrix {
    RowMatrixXd probs;               ///< b x b, symmetric, zero diagonal, sums to 1
    std::vector<KappaResult> rows;   ///< per-row calibration
    std::size_t degenerate_rows = 0;

    std::vector<double> kappas() const;
};

struct QMatrix {
    RowMatrixXd probs;       ///< symmetrised
    RowMatrixXd conditional; ///< row i holds q_{j|i}
    double tau = 0.1;
};

/// Requires unit rows, b >= 3 and log2(perplexity) <= log2(b - 1).
PMatrix build_p_matrix(const RowMatrixXd& z, const VmfSneConfig& cfg);

/// Same construction with the constant concentration 1/tau on every row.
QMatrix build_q_matrix(const RowMatrixXd& z, double tau);

/// Sum over i != j of p_ij log(p_ij / q_ij), with 0 log 0 = 0.
double kl_loss(const PMatrix& p, const QMatrix& q);

/// dKL/dZ for the projected rows Z that produced `q`.
RowMatrixXd kl_gradient(const PMatrix& p, const QMatrix& q, const RowMatrixXd& z);

/// KL(P, Q(head(x))) and its gradient with respect to the head parameters.
template <typename Scalar>
LossAndGradients<Scalar> vmfsne_objective(const ProjectionHead<Scalar>& head, const RowMatrix<Scalar>& x,
                                          const PMatrix& p, double tau);

struct VmfSneEpoch {
    int epoch = 0;
    double kl = 0.0; ///< mean over non-skipped steps
    std::optional<double> knn_acc;
    std::size_t skipped_steps = 0;
};

struct PretrainResult {
    ProjectionHead<float> head;
    std::vector<VmfSneEpoch> history;
};

/**
 * Mini-batch vMF-SNE pretraining of `head` with LARS-SGD and a warmup-cosine
 * schedule. `eval` (labelled) enables per-epoch kNN accuracy of the head, with
 * `ds` (labelled) as the kNN training split.
 */
PretrainResult pretrain_vmfsne(const EmbeddingDataset& ds, ProjectionHead<float> head, const VmfSneConfig& cfg,
                               Rng& rng, const EmbeddingDataset* eval = nullptr);

} // namespace protopaws
