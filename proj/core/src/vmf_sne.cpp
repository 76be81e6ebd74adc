#include "protopaws/vmf_sne.hpp"

#include "protopaws/errors.hpp"
#include "protopaws/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numbers>
#include <numeric>

namespace protopaws {

void VmfSneConfig::validate() const {
    require(perplexity >= 2.0, "vmf-sne: perplexity must be >= 2");
    require(tau > 0.0, "vmf-sne: tau must be positive");
    require(kappa_min > 0.0 && kappa_max > kappa_min, "vmf-sne: need 0 < kappa_min < kappa_max");
    require(entropy_tolerance > 0.0, "vmf-sne: entropy tolerance must be positive");
    require(max_iterations >= 1, "vmf-sne: max_iterations must be >= 1");
    require(batch_size >= 2, "vmf-sne: batch_size must be >= 2");
    require(epochs >= 1, "vmf-sne: epochs must be >= 1");
    require(warmup_epochs >= 0, "vmf-sne: warmup_epochs must be >= 0");
    knn.validate();
}

std::vector<double> PMatrix::kappas() const {
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(r.kappa);
    return out;
}

double vmf_row_entropy_bits(std::span<const double> sims, double kappa) {
    const double hi = *std::max_element(sims.begin(), sims.end());
    double z = 0.0;
    double weighted = 0.0;
    for (double s : sims) {
        const double w = std::exp(kappa * (s - hi));
        z += w;
        weighted += w * (s - hi);
    }
    // -sum p log p = log Z - kappa * E[s - max]
    const double nats = std::log(z) - kappa * weighted / z;
    return nats / std::numbers::ln2;
}

KappaResult bisect_kappa(std::span<const double> sims, double target_entropy_bits, const VmfSneConfig& cfg) {
    require(sims.size() >= 2, "bisect_kappa: need at least two neighbours (b >= 3)");
    const double ceiling = std::log2(static_cast<double>(sims.size()));
    require(target_entropy_bits <= ceiling + 1e-12, "bisect_kappa: target entropy exceeds log2(b - 1)");

    KappaResult res;
    const auto [lo_it, hi_it] = std::minmax_element(sims.begin(), sims.end());
    if (*hi_it - *lo_it <= 1e-12 * (1.0 + std::abs(*hi_it))) {
        res.kappa = cfg.kappa_min;
        res.entropy_bits = ceiling;
        res.degenerate = true;
        return res;
    }

    double lo = cfg.kappa_min;
    double h_lo = vmf_row_entropy_bits(sims, lo);
    if (h_lo <= target_entropy_bits) {
        res.kappa = lo;
        res.entropy_bits = h_lo;
        res.clamped = std::abs(h_lo - target_entropy_bits) > cfg.entropy_tolerance;
        return res;
    }

    double hi = cfg.kappa_max;
    double h_hi = vmf_row_entropy_bits(sims, hi);
    const double hi_limit = cfg.kappa_max * 1e6;
    while (h_hi > target_entropy_bits && hi < hi_limit) {
        lo = hi;
        hi *= 10.0;
        h_hi = vmf_row_entropy_bits(sims, hi);
    }
    if (h_hi > target_entropy_bits) {
        res.kappa = hi;
        res.entropy_bits = h_hi;
        res.clamped = std::abs(h_hi - target_entropy_bits) > cfg.entropy_tolerance;
        return res;
    }

    double mid = lo;
    double h_mid = h_lo;
    for (int it = 0; it < cfg.max_iterations; ++it) {
        mid = 0.5 * (lo + hi);
        h_mid = vmf_row_entropy_bits(sims, mid);
        res.iterations = it + 1;
        if (std::abs(h_mid - target_entropy_bits) < cfg.entropy_tolerance) break;
        if (h_mid > target_entropy_bits) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    res.kappa = mid;
    res.entropy_bits = h_mid;
    return res;
}

namespace {

void check_unit_rows(const RowMatrixXd& z, const char* who) {
    require(z.rows() >= 3, std::string(who) + ": need at least 3 rows");
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        require(std::abs(z.row(i).norm() - 1.0) < 1e-4, std::string(who) + ": rows must have unit norm");
    }
}

// Row-wise softmax of kappa_i * s_ij over j != i.
void fill_conditional_row(const RowMatrixXd& sims, Eigen::Index i, double kappa, RowMatrixXd& cond) {
    const Eigen::Index b = sims.rows();
    double hi = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < b; ++j) {
        if (j != i) hi = std::max(hi, sims(i, j));
    }
    double total = 0.0;
    for (Eigen::Index j = 0; j < b; ++j) {
        const double w = j == i ? 0.0 : std::exp(kappa * (sims(i, j) - hi));
        cond(i, j) = w;
        total += w;
    }
    cond.row(i) /= total;
}

RowMatrixXd symmetrise(const RowMatrixXd& cond) {
    const Eigen::Index b = cond.rows();
    const double scale = 1.0 / (2.0 * static_cast<double>(b));
    RowMatrixXd out = RowMatrixXd::Zero(b, b);
    for (Eigen::Index i = 0; i < b; ++i) {
        for (Eigen::Index j = i + 1; j < b; ++j) {
            const double v = (cond(i, j) + cond(j, i)) * scale;
            out(i, j) = v;
            out(j, i) = v;
        }
    }
    return out;
}

} // namespace

PMatrix build_p_matrix(const RowMatrixXd& z, const VmfSneConfig& cfg) {
    cfg.validate();
    check_unit_rows(z, "build_p_matrix");
    const Eigen::Index b = z.rows();
    const double target = std::log2(cfg.perplexity);
    require(target <= std::log2(static_cast<double>(b - 1)) + 1e-12,
            "build_p_matrix: perplexity exceeds batch size - 1");

    const RowMatrixXd sims = z * z.transpose();
    RowMatrixXd cond(b, b);
    PMatrix p;
    p.rows.resize(static_cast<std::size_t>(b));
    parallel_for(static_cast<std::size_t>(b), [&](std::size_t row) {
        const auto i = static_cast<Eigen::Index>(row);
        std::vector<double> others;
        others.reserve(static_cast<std::size_t>(b - 1));
        for (Eigen::Index j = 0; j < b; ++j) {
            if (j != i) others.push_back(sims(i, j));
        }
        p.rows[row] = bisect_kappa(others, target, cfg);
        fill_conditional_row(sims, i, p.rows[row].kappa, cond);
    });
    p.degenerate_rows = static_cast<std::size_t>(
        std::count_if(p.rows.begin(), p.rows.end(), [](const KappaResult& r) { return r.degenerate; }));
    p.probs = symmetrise(cond);
    return p;
}

QMatrix build_q_matrix(const RowMatrixXd& z, double tau) {
    require(tau > 0.0, "build_q_matrix: tau must be positive");
    check_unit_rows(z, "build_q_matrix");
    const Eigen::Index b = z.rows();
    const RowMatrixXd sims = z * z.transpose();
    QMatrix q;
    q.tau = tau;
    q.conditional.resize(b, b);
    parallel_for(static_cast<std::size_t>(b), [&](std::size_t row) {
        fill_conditional_row(sims, static_cast<Eigen::Index>(row), 1.0 / tau, q.conditional);
    });
    q.probs = symmetrise(q.conditional);
    return q;
}

double kl_loss(const PMatrix& p, const QMatrix& q) {
    require(p.probs.rows() == q.probs.rows() && p.probs.cols() == q.probs.cols(), "kl_loss: shape mismatch");
    const Eigen::Index b = p.probs.rows();
    double total = 0.0;
    for (Eigen::Index i = 0; i < b; ++i) {
        for (Eigen::Index j = 0; j < b; ++j) {
            if (i == j) continue;
            const double pij = p.probs(i, j);
            if (pij <= 0.0) continue;
            const double qij = q.probs(i, j);
            if (qij <= 0.0) throw NumericError("kl_loss: q_ij = 0 where p_ij > 0 (infinite loss)");
            total += pij * std::log(pij / qij);
        }
    }
    return total;
}

RowMatrixXd kl_gradient(const PMatrix& p, const QMatrix& q, const RowMatrixXd& z) {
    const Eigen::Index b = z.rows();
    require(p.probs.rows() == b && q.probs.rows() == b, "kl_gradient: shape mismatch");
    const double inv_b = 1.0 / static_cast<double>(b);

    // dKL/dq_{j|i}: q_{j|i} enters q_ij and q_ji, each with weight 1/(2b)
    RowMatrixXd g_cond = RowMatrixXd::Zero(b, b);
    for (Eigen::Index i = 0; i < b; ++i) {
        for (Eigen::Index j = 0; j < b; ++j) {
            if (i != j && p.probs(i, j) > 0.0) g_cond(i, j) = -p.probs(i, j) / q.probs(i, j) * inv_b;
        }
    }
    // softmax backward, per row, to the logits s_ij / tau
    RowMatrixXd g_logit(b, b);
    for (Eigen::Index i = 0; i < b; ++i) {
        const double dot = q.conditional.row(i).dot(g_cond.row(i));
        g_logit.row(i) = q.conditional.row(i).cwiseProduct((g_cond.row(i).array() - dot).matrix());
    }
    const RowMatrixXd m = (g_logit + g_logit.transpose()) / q.tau;
    return m * z;
}

template <typename Scalar>
LossAndGradients<Scalar> vmfsne_objective(const ProjectionHead<Scalar>& head, const RowMatrix<Scalar>& x,
                                          const PMatrix& p, double tau) {
    const ForwardCache<Scalar> cache = forward_with_cache(head, x);
    const RowMatrixXd z = cache.output.template cast<double>();
    const QMatrix q = build_q_matrix(z, tau);
    LossAndGradients<Scalar> out;
    out.loss = kl_loss(p, q);
    const RowMatrix<Scalar> upstream = kl_gradient(p, q, z).template cast<Scalar>();
    out.grads = backward_gradients(head, cache, upstream);
    return out;
}

template LossAndGradients<float> vmfsne_objective<float>(const ProjectionHead<float>&, const RowMatrix<float>&,
                                                         const PMatrix&, double);
template LossAndGradients<double> vmfsne_objective<double>(const ProjectionHead<double>&, const RowMatrix<double>&,
                                                           const PMatrix&, double);

PretrainResult pretrain_vmfsne(const EmbeddingDataset& ds, ProjectionHead<float> head, const VmfSneConfig& cfg,
                               Rng& rng, const EmbeddingDataset* eval) {
    cfg.validate();
    require(head.in_dim() == static_cast<Eigen::Index>(ds.dim), "pretrain_vmfsne: head input dim != dataset dim");
    require(ds.n_items >= cfg.batch_size, "pretrain_vmfsne: dataset smaller than batch_size");
    const bool track_knn = eval != nullptr && eval->has_labels() && ds.has_labels();

    const std::size_t steps_per_epoch = ds.n_items / cfg.batch_size;
    const LrSchedule sched = make_schedule(static_cast<std::int64_t>(steps_per_epoch), cfg.epochs,
                                           cfg.warmup_epochs, cfg.start_lr, cfg.max_lr, cfg.final_lr);
    LarsState<float> lars = make_lars_state(head, cfg.lars);

    std::vector<std::uint32_t> order(ds.n_items);
    std::iota(order.begin(), order.end(), 0u);

    PretrainResult result;
    std::int64_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        VmfSneEpoch record;
        record.epoch = epoch;
        double kl_sum = 0.0;
        std::size_t kl_count = 0;
        for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
            const std::span<const std::uint32_t> items(order.data() + s * cfg.batch_size, cfg.batch_size);
            const ViewBatch views = sample_view_batch(ds, items, 0, rng);
            RowMatrixXf x;
            if (ds.n_global >= 2) {
                x.resize(static_cast<Eigen::Index>(2 * items.size()), ds.dim);
                x << views.global_matrix(0), views.global_matrix(1);
            } else {
                x = views.global_matrix(0);
            }
            const PMatrix p = build_p_matrix(x.cast<double>(), cfg);
            if (p.degenerate_rows == static_cast<std::size_t>(x.rows())) {
                std::cerr << "warning: vmf-sne step " << step << " skipped (degenerate batch)\n";
                ++record.skipped_steps;
                continue;
            }
            const auto objective = vmfsne_objective(head, x, p, cfg.tau);
            lars_update(lars, head, objective.grads, lr_at(sched, step));
            kl_sum += objective.loss;
            ++kl_count;
        }
        record.kl = kl_count > 0 ? kl_sum / static_cast<double>(kl_count) : 0.0;
        if (track_knn) record.knn_acc = evaluate_knn(ds, *eval, cfg.knn, &head);
        result.history.push_back(record);
    }
    result.head = std::move(head);
    return result;
}

} // namespace protopaws
