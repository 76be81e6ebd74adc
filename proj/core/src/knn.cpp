#include "protopaws/knn.hpp"

#include "protopaws/errors.hpp"
#include "protopaws/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace protopaws {

void KnnConfig::validate() const {
    require(k >= 1, "knn: k must be >= 1");
    require(tau > 0.0, "knn: tau must be positive");
}

std::size_t argmax(std::span<const double> values) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) best = i;
    }
    return best;
}

std::vector<double> knn_vote(std::span<const double> sims, std::span<const ClassId> train_labels,
                             std::size_t n_classes, const KnnConfig& cfg) {
    cfg.validate();
    require(!sims.empty(), "knn: empty training set");
    require(sims.size() == train_labels.size(), "knn: label count does not match training rows");
    const std::size_t k = std::min(cfg.k, sims.size());

    std::vector<std::size_t> order(sims.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto closer = [&](std::size_t a, std::size_t b) {
        return sims[a] > sims[b] || (sims[a] == sims[b] && a < b);
    };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), closer);

    const double top = sims[order[0]];
    std::vector<double> scores(n_classes, 0.0);
    for (std::size_t r = 0; r < k; ++r) {
        const std::size_t j = order[r];
        const ClassId y = train_labels[j];
        require(y >= 0 && static_cast<std::size_t>(y) < n_classes, "knn: label out of range");
        scores[static_cast<std::size_t>(y)] += std::exp((sims[j] - top) / cfg.tau);
    }
    const double total = std::accumulate(scores.begin(), scores.end(), 0.0);
    for (double& s : scores) s /= total;
    return scores;
}

template <typename Scalar>
std::vector<double> knn_predict(const RowMatrix<Scalar>& train_z, std::span<const ClassId> train_labels,
                                std::size_t n_classes, std::span<const Scalar> query, const KnnConfig& cfg) {
    require(train_z.rows() > 0, "knn: empty training set");
    require(static_cast<Eigen::Index>(query.size()) == train_z.cols(), "knn: query width mismatch");
    const Eigen::Map<const Vector<Scalar>> q(query.data(), static_cast<Eigen::Index>(query.size()));
    const Vector<double> sims = (train_z * q).template cast<double>();
    return knn_vote({sims.data(), static_cast<std::size_t>(sims.size())}, train_labels, n_classes, cfg);
}

template <typename Scalar>
double knn_accuracy(const RowMatrix<Scalar>& train_z, std::span<const ClassId> train_labels,
                    const RowMatrix<Scalar>& eval_z, std::span<const ClassId> eval_labels,
                    std::size_t n_classes, const KnnConfig& cfg) {
    cfg.validate();
    require(train_z.rows() > 0, "knn: empty training set");
    require(train_z.cols() == eval_z.cols(), "knn: train/eval width mismatch");
    require(static_cast<Eigen::Index>(eval_labels.size()) == eval_z.rows(), "knn: eval label count mismatch");
    if (eval_z.rows() == 0) return 0.0;
    for (ClassId y : train_labels) {
        require(y >= 0 && static_cast<std::size_t>(y) < n_classes, "knn: label out of range");
    }

    constexpr Eigen::Index kChunk = 256;
    std::vector<char> correct(static_cast<std::size_t>(eval_z.rows()), 0);
    for (Eigen::Index start = 0; start < eval_z.rows(); start += kChunk) {
        const Eigen::Index rows = std::min(kChunk, eval_z.rows() - start);
        const RowMatrix<double> sims =
            (eval_z.middleRows(start, rows) * train_z.transpose()).template cast<double>();
        parallel_for(static_cast<std::size_t>(rows), [&](std::size_t r) {
            const auto row = sims.row(static_cast<Eigen::Index>(r));
            const auto probs = knn_vote({row.data(), static_cast<std::size_t>(row.size())}, train_labels,
                                        n_classes, cfg);
            const std::size_t i = static_cast<std::size_t>(start) + r;
            correct[i] = argmax(probs) == static_cast<std::size_t>(eval_labels[i]) ? 1 : 0;
        });
    }
    const auto hits = std::count(correct.begin(), correct.end(), 1);
    return static_cast<double>(hits) / static_cast<double>(eval_z.rows());
}

double evaluate_knn(const EmbeddingDataset& train, const EmbeddingDataset& eval, const KnnConfig& cfg,
                    const ProjectionHead<float>* head) {
    require(train.has_labels() && eval.has_labels(), "evaluate_knn: both splits need labels");
    require(train.dim == eval.dim, "evaluate_knn: dimension mismatch between splits");
    const std::size_t n_classes = std::max(train.n_classes, eval.n_classes);
    RowMatrixXf train_z = train.canonical_matrix();
    RowMatrixXf eval_z = eval.canonical_matrix();
    if (head) {
        train_z = forward_project(*head, train_z);
        eval_z = forward_project(*head, eval_z);
    }
    return knn_accuracy<float>(train_z, *train.labels, eval_z, *eval.labels, n_classes, cfg);
}

template std::vector<double> knn_predict<float>(const RowMatrix<float>&, std::span<const ClassId>, std::size_t,
                                                std::span<const float>, const KnnConfig&);
template std::vector<double> knn_predict<double>(const RowMatrix<double>&, std::span<const ClassId>, std::size_t,
                                                 std::span<const double>, const KnnConfig&);
template double knn_accuracy<float>(const RowMatrix<float>&, std::span<const ClassId>, const RowMatrix<float>&,
                                    std::span<const ClassId>, std::size_t, const KnnConfig&);
template double knn_accuracy<double>(const RowMatrix<double>&, std::span<const ClassId>, const RowMatrix<double>&,
                                     std::span<const ClassId>, std::size_t, const KnnConfig&);

} // namespace protopaws
