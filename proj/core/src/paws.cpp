#include "protopaws/paws.hpp"

#include "protopaws/errors.hpp"
#include "protopaws/knn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <string>

namespace protopaws {

LossMode parse_loss_mode(std::string_view name) {
    if (name == "consistency") return LossMode::consistency;
    if (name == "pseudolabel") return LossMode::pseudolabel;
    throw ConfigError("unknown loss mode '" + std::string(name) + "' (expected consistency|pseudolabel)");
}

std::string_view to_string(LossMode mode) {
    return mode == LossMode::consistency ? "consistency" : "pseudolabel";
}

void PawsConfig::validate() const {
    require(tau > 0.0, "paws: tau must be positive");
    require(sharpen_t > 0.0 && sharpen_t <= 1.0, "paws: sharpening T must be in (0, 1]");
    require(label_smoothing >= 0.0 && label_smoothing < 1.0, "paws: label smoothing must be in [0, 1)");
    require(unlabelled_batch >= 1, "paws: unlabelled batch must be >= 1");
    require(epochs >= 1, "paws: epochs must be >= 1");
    require(warmup_epochs >= 0, "paws: warmup_epochs must be >= 0");
}

RowMatrixXd smooth_labels(std::span<const ClassId> labels, std::size_t n_classes, double eps) {
    require(eps >= 0.0 && eps < 1.0, "smooth_labels: eps must be in [0, 1)");
    require(n_classes >= 1, "smooth_labels: need at least one class");
    const auto c = static_cast<Eigen::Index>(n_classes);
    RowMatrixXd out = RowMatrixXd::Constant(static_cast<Eigen::Index>(labels.size()), c,
                                            eps / static_cast<double>(n_classes));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        require(labels[i] >= 0 && labels[i] < c, "smooth_labels: label out of range");
        out(static_cast<Eigen::Index>(i), labels[i]) += 1.0 - eps;
    }
    return out;
}

PrototypeSet make_prototype_set(const EmbeddingDataset& ds, std::span<const std::uint32_t> indices,
                                double label_smoothing) {
    require(ds.has_labels(), "prototypes: dataset has no labels");
    require(!indices.empty(), "prototypes: empty prototype set");
    std::set<std::uint32_t> seen;
    PrototypeSet protos;
    protos.n_classes = ds.n_classes;
    for (std::uint32_t i : indices) {
        require(i < ds.n_items, "prototypes: index " + std::to_string(i) + " out of range");
        require(seen.insert(i).second, "prototypes: duplicate index " + std::to_string(i));
        protos.indices.push_back(i);
        protos.labels.push_back((*ds.labels)[i]);
    }
    protos.soft_labels = smooth_labels(protos.labels, protos.n_classes, label_smoothing);
    return protos;
}

namespace {

RowMatrixXd row_softmax(const RowMatrixXd& logits) {
    RowMatrixXd out(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double hi = logits.row(i).maxCoeff();
        out.row(i) = (logits.row(i).array() - hi).exp().matrix();
        out.row(i) /= out.row(i).sum();
    }
    return out;
}

std::vector<double> normalise_log_weights(std::vector<double> logw) {
    const double hi = *std::max_element(logw.begin(), logw.end());
    if (!std::isfinite(hi)) throw NumericError("sharpen: degenerate target (all weights zero)");
    double total = 0.0;
    for (double& v : logw) {
        v = std::exp(v - hi);
        total += v;
    }
    for (double& v : logw) v /= total;
    return logw;
}

double safe_log(double p) {
    return p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity();
}

std::vector<double> row_of(const RowMatrixXd& m, Eigen::Index i) {
    return {m.row(i).data(), m.row(i).data() + m.cols()};
}

// Chain rule through sharpen(p, t): dL/dp_k = (1/t) * rho_k / p_k * (u_k - u . rho)
void sharpen_backward(std::span<const double> p, std::span<const double> rho, std::span<const double> upstream,
                      double t, double* out) {
    double dot = 0.0;
    for (std::size_t c = 0; c < p.size(); ++c) dot += upstream[c] * rho[c];
    for (std::size_t c = 0; c < p.size(); ++c) {
        if (p[c] > 0.0) out[c] += rho[c] / (t * p[c]) * (upstream[c] - dot);
    }
}

} // namespace

RowMatrixXd predict_classes(const RowMatrixXd& zq, const RowMatrixXd& zs, const RowMatrixXd& ys, double tau) {
    require(zs.rows() > 0, "predict_classes: empty prototype set");
    require(tau > 0.0, "predict_classes: tau must be positive");
    require(zq.cols() == zs.cols() && ys.rows() == zs.rows(), "predict_classes: shape mismatch");
    return row_softmax(zq * zs.transpose() / tau) * ys;
}

PredictionGradients predict_classes_backward(const RowMatrixXd& zq, const RowMatrixXd& zs, const RowMatrixXd& ys,
                                             double tau, const RowMatrixXd& d_probs) {
    const RowMatrixXd weights = row_softmax(zq * zs.transpose() / tau);
    const RowMatrixXd d_weights = d_probs * ys.transpose();
    const Vector<double> along = weights.cwiseProduct(d_weights).rowwise().sum();
    const RowMatrixXd d_logits =
        weights.cwiseProduct((d_weights.array().colwise() - along.array()).matrix()) / tau;
    return {d_logits * zs, d_logits.transpose() * zq};
}

std::vector<double> sharpen(std::span<const double> p, double t) {
    require(t > 0.0, "sharpen: T must be positive");
    require(!p.empty(), "sharpen: empty distribution");
    std::vector<double> logw(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) logw[i] = safe_log(p[i]) / t;
    return normalise_log_weights(std::move(logw));
}

std::vector<double> joint_sharpen(std::span<const double> p1, std::span<const double> p2, double t) {
    require(t > 0.0, "joint_sharpen: T must be positive");
    require(p1.size() == p2.size() && !p1.empty(), "joint_sharpen: size mismatch");
    std::vector<double> logw(p1.size());
    for (std::size_t i = 0; i < p1.size(); ++i) logw[i] = (safe_log(p1[i]) + safe_log(p2[i])) / (2.0 * t);
    return normalise_log_weights(std::move(logw));
}

PawsLoss paws_loss(const RowMatrixXd& p1, const RowMatrixXd& p2, std::span<const RowMatrixXd> local,
                   const PawsConfig& cfg) {
    const Eigen::Index n = p1.rows();
    const Eigen::Index c = p1.cols();
    require(n >= 1, "paws_loss: empty batch");
    require(p2.rows() == n && p2.cols() == c, "paws_loss: view shape mismatch");
    for (const auto& l : local) require(l.rows() == n && l.cols() == c, "paws_loss: local view shape mismatch");
    const double t = cfg.sharpen_t;

    // constant targets per anchor view
    RowMatrixXd target1(n, c), target2(n, c), target_local(n, c);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto a = row_of(p1, i);
        const auto b = row_of(p2, i);
        std::vector<double> t1, t2, tl(static_cast<std::size_t>(c));
        if (cfg.loss_mode == LossMode::consistency) {
            t1 = sharpen(b, t);
            t2 = sharpen(a, t);
            for (std::size_t k = 0; k < tl.size(); ++k) tl[k] = 0.5 * (t1[k] + t2[k]);
        } else {
            t1 = joint_sharpen(a, b, t);
            t2 = t1;
            tl = t1;
        }
        target1.row(i) = Eigen::Map<const Eigen::RowVectorXd>(t1.data(), c);
        target2.row(i) = Eigen::Map<const Eigen::RowVectorXd>(t2.data(), c);
        target_local.row(i) = Eigen::Map<const Eigen::RowVectorXd>(tl.data(), c);
    }

    std::vector<const RowMatrixXd*> anchors{&p1, &p2};
    std::vector<const RowMatrixXd*> targets{&target1, &target2};
    for (const auto& l : local) {
        anchors.push_back(&l);
        targets.push_back(&target_local);
    }
    const double rows = static_cast<double>(anchors.size()) * static_cast<double>(n);

    PawsLoss out;
    std::vector<RowMatrixXd> grads(anchors.size(), RowMatrixXd::Zero(n, c));
    double ce = 0.0;
    for (std::size_t v = 0; v < anchors.size(); ++v) {
        const RowMatrixXd& p = *anchors[v];
        const RowMatrixXd& tgt = *targets[v];
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index k = 0; k < c; ++k) {
                const double tk = tgt(i, k);
                if (tk == 0.0) continue;
                if (!(p(i, k) > 0.0)) throw NumericError("paws_loss: zero probability under a positive target");
                ce -= tk * std::log(p(i, k));
                grads[v](i, k) -= tk / (p(i, k) * rows);
            }
        }
    }
    out.cross_entropy = ce / rows;

    if (cfg.me_max) {
        std::vector<std::vector<double>> sharpened;
        std::vector<double> mean(static_cast<std::size_t>(c), 0.0);
        for (const RowMatrixXd* p : anchors) {
            for (Eigen::Index i = 0; i < n; ++i) {
                sharpened.push_back(sharpen(row_of(*p, i), t));
                for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += sharpened.back()[k] / rows;
            }
        }
        double neg_entropy = 0.0;
        std::vector<double> upstream(mean.size());
        for (std::size_t k = 0; k < mean.size(); ++k) {
            if (mean[k] > 0.0) neg_entropy += mean[k] * std::log(mean[k]);
            upstream[k] = mean[k] > 0.0 ? (std::log(mean[k]) + 1.0) / rows : 0.0;
        }
        out.me_max = neg_entropy;
        std::size_t r = 0;
        for (std::size_t v = 0; v < anchors.size(); ++v) {
            for (Eigen::Index i = 0; i < n; ++i, ++r) {
                sharpen_backward(row_of(*anchors[v], i), sharpened[r], upstream, t, grads[v].row(i).data());
            }
        }
    }

    out.loss = out.cross_entropy + out.me_max;
    out.grad_g1 = std::move(grads[0]);
    out.grad_g2 = std::move(grads[1]);
    for (std::size_t v = 2; v < grads.size(); ++v) out.grad_local.push_back(std::move(grads[v]));
    return out;
}

std::vector<std::size_t> stratified_batch(const PrototypeSet& protos, std::size_t per_class,
                                          std::size_t classes_per_batch, Rng& rng) {
    std::map<ClassId, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < protos.size(); ++i) by_class[protos.labels[i]].push_back(i);

    std::vector<ClassId> classes;
    if (classes_per_batch == 0) {
        for (std::size_t k = 0; k < protos.n_classes; ++k) {
            const auto y = static_cast<ClassId>(k);
            require(by_class.contains(y), "stratified_batch: class " + std::to_string(y) + " has no prototypes");
            classes.push_back(y);
        }
    } else {
        for (const auto& entry : by_class) classes.push_back(entry.first);
        require(classes_per_batch <= classes.size(), "stratified_batch: more classes requested than available");
        std::shuffle(classes.begin(), classes.end(), rng);
        classes.resize(classes_per_batch);
        std::sort(classes.begin(), classes.end());
    }

    std::vector<std::size_t> out;
    for (ClassId y : classes) {
        std::vector<std::size_t> members = by_class.at(y);
        const std::size_t want = per_class == 0 ? members.size() : per_class;
        std::shuffle(members.begin(), members.end(), rng);
        if (want <= members.size()) {
            out.insert(out.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(want));
        } else {
            out.insert(out.end(), members.begin(), members.end());
            std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
            for (std::size_t extra = members.size(); extra < want; ++extra) out.push_back(members[pick(rng)]);
        }
    }
    return out;
}

template <typename Scalar>
LossAndGradients<Scalar> paws_objective(const ProjectionHead<Scalar>& head, const RowMatrix<Scalar>& global1,
                                        const RowMatrix<Scalar>& global2, std::span<const RowMatrix<Scalar>> local,
                                        const RowMatrix<Scalar>& support, const RowMatrixXd& support_targets,
                                        const PawsConfig& cfg) {
    const Eigen::Index n = global1.rows();
    const Eigen::Index m = support.rows();
    require(global2.rows() == n, "paws_objective: global view row mismatch");
    require(support_targets.rows() == m, "paws_objective: support target row mismatch");

    const Eigen::Index views = 2 + static_cast<Eigen::Index>(local.size());
    RowMatrix<Scalar> x(views * n + m, global1.cols());
    x.topRows(n) = global1;
    x.middleRows(n, n) = global2;
    for (std::size_t v = 0; v < local.size(); ++v) {
        require(local[v].rows() == n, "paws_objective: local view row mismatch");
        x.middleRows((2 + static_cast<Eigen::Index>(v)) * n, n) = local[v];
    }
    x.bottomRows(m) = support;

    const ForwardCache<Scalar> cache = forward_with_cache(head, x);
    const RowMatrixXd z = cache.output.template cast<double>();
    const RowMatrixXd zs = z.bottomRows(m);

    std::vector<RowMatrixXd> probs;
    for (Eigen::Index v = 0; v < views; ++v) {
        probs.push_back(predict_classes(z.middleRows(v * n, n), zs, support_targets, cfg.tau));
    }
    const PawsLoss loss = paws_loss(probs[0], probs[1], std::span<const RowMatrixXd>(probs).subspan(2), cfg);

    RowMatrixXd dz = RowMatrixXd::Zero(z.rows(), z.cols());
    for (Eigen::Index v = 0; v < views; ++v) {
        const RowMatrixXd& d_probs = v == 0   ? loss.grad_g1
                                     : v == 1 ? loss.grad_g2
                                              : loss.grad_local[static_cast<std::size_t>(v - 2)];
        const auto g = predict_classes_backward(z.middleRows(v * n, n), zs, support_targets, cfg.tau, d_probs);
        dz.middleRows(v * n, n) += g.d_query;
        dz.bottomRows(m) += g.d_support;
    }

    LossAndGradients<Scalar> out;
    out.loss = loss.loss;
    out.grads = backward_gradients(head, cache, RowMatrix<Scalar>(dz.template cast<Scalar>()));
    return out;
}

template LossAndGradients<float> paws_objective<float>(const ProjectionHead<float>&, const RowMatrix<float>&,
                                                       const RowMatrix<float>&, std::span<const RowMatrix<float>>,
                                                       const RowMatrix<float>&, const RowMatrixXd&,
                                                       const PawsConfig&);
template LossAndGradients<double> paws_objective<double>(const ProjectionHead<double>&, const RowMatrix<double>&,
                                                         const RowMatrix<double>&, std::span<const RowMatrix<double>>,
                                                         const RowMatrix<double>&, const RowMatrixXd&,
                                                         const PawsConfig&);

double prototype_accuracy(const EmbeddingDataset& ds, const PrototypeSet& protos, const EmbeddingDataset& eval,
                          const ProjectionHead<float>& head, double tau) {
    require(eval.has_labels(), "prototype_accuracy: eval split has no labels");
    if (eval.n_items == 0) return 0.0;
    RowMatrixXf support(static_cast<Eigen::Index>(protos.size()), ds.dim);
    for (std::size_t i = 0; i < protos.size(); ++i) {
        const auto row = ds.canonical_row(protos.indices[i]);
        std::copy(row.begin(), row.end(), support.row(static_cast<Eigen::Index>(i)).data());
    }
    const RowMatrixXd zs = forward_project(head, support).cast<double>();
    const RowMatrixXd zq = forward_project(head, eval.canonical_matrix()).cast<double>();
    const RowMatrixXd probs = predict_classes(zq, zs, protos.soft_labels, tau);
    std::size_t hits = 0;
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        const auto row = row_of(probs, i);
        if (argmax(row) == static_cast<std::size_t>((*eval.labels)[static_cast<std::size_t>(i)])) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(eval.n_items);
}

PawsResult train_paws(const EmbeddingDataset& ds, const PrototypeSet& protos, ProjectionHead<float> head,
                      const PawsConfig& cfg, Rng& rng, const EmbeddingDataset* eval) {
    cfg.validate();
    require(head.in_dim() == static_cast<Eigen::Index>(ds.dim), "train_paws: head input dim != dataset dim");
    require(cfg.n_local <= ds.n_local, "train_paws: n_local exceeds the dataset's local view pool");
    require(protos.size() > 0, "train_paws: no prototypes");
    const EmbeddingDataset& val = eval ? *eval : ds;
    require(val.has_labels(), "train_paws: validation split needs labels");
    require(ds.n_items >= 1, "train_paws: empty dataset");

    const std::size_t batch = std::min<std::size_t>(cfg.unlabelled_batch, ds.n_items);
    const std::size_t steps_per_epoch = ds.n_items / batch;
    const LrSchedule sched = make_schedule(static_cast<std::int64_t>(steps_per_epoch), cfg.epochs,
                                           cfg.warmup_epochs, cfg.start_lr, cfg.max_lr, cfg.final_lr);
    LarsState<float> lars = make_lars_state(head, cfg.lars);

    PawsResult result;
    result.initial_val_acc = prototype_accuracy(ds, protos, val, head, cfg.tau);

    std::vector<std::uint32_t> order(ds.n_items);
    std::iota(order.begin(), order.end(), 0u);
    std::int64_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
            const auto positions = stratified_batch(protos, cfg.support_per_class, cfg.classes_per_batch, rng);
            std::vector<std::uint32_t> support_items;
            RowMatrixXd support_targets(static_cast<Eigen::Index>(positions.size()), protos.soft_labels.cols());
            for (std::size_t i = 0; i < positions.size(); ++i) {
                support_items.push_back(protos.indices[positions[i]]);
                support_targets.row(static_cast<Eigen::Index>(i)) =
                    protos.soft_labels.row(static_cast<Eigen::Index>(positions[i]));
            }
            const ViewBatch support_views = sample_view_batch(ds, support_items, 0, rng);

            const std::span<const std::uint32_t> items(order.data() + s * batch, batch);
            const ViewBatch views = sample_view_batch(ds, items, cfg.n_local, rng);
            std::vector<RowMatrixXf> locals;
            for (std::uint32_t v = 0; v < cfg.n_local; ++v) locals.push_back(views.local_matrix(v));

            const auto objective = paws_objective<float>(head, views.global_matrix(0), views.global_matrix(1),
                                                         locals, support_views.global_matrix(0), support_targets,
                                                         cfg);
            lars_update(lars, head, objective.grads, lr_at(sched, step));
            loss_sum += objective.loss;
        }
        PawsEpoch record;
        record.epoch = epoch;
        record.loss = loss_sum / static_cast<double>(steps_per_epoch);
        record.val_acc = prototype_accuracy(ds, protos, val, head, cfg.tau);
        result.history.push_back(record);
    }
    result.head = std::move(head);
    return result;
}

} // namespace protopaws
