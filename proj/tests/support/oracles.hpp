#pragma once

// Straight-line reference implementations used as test oracles. They share no
// code with the library: plain loops over std::vector, pow instead of log-domain
// tricks, and no Eigen expressions beyond element access.

#include "protopaws/nn.hpp"
#include "protopaws/types.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

using protopaws::RowMatrixXd;
using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const RowMatrixXd& m) {
    Mat out(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
    }
    return out;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

/// g(x)/||g(x)|| row by row with explicit multiply-accumulate loops.
inline Mat forward(const protopaws::ProjectionHead<double>& head, const Mat& x) {
    Mat out;
    for (const auto& row : x) {
        std::vector<double> a = row;
        for (std::size_t l = 0; l < 3; ++l) {
            const auto& w = head.layers[l].weight;
            const auto& b = head.layers[l].bias;
            std::vector<double> next(static_cast<std::size_t>(w.rows()));
            for (Eigen::Index o = 0; o < w.rows(); ++o) {
                double s = b[o];
                for (Eigen::Index k = 0; k < w.cols(); ++k) s += w(o, k) * a[static_cast<std::size_t>(k)];
                next[static_cast<std::size_t>(o)] = l < 2 ? gelu(s) : s;
            }
            a = next;
        }
        double n = 0.0;
        for (double v : a) n += v * v;
        n = std::sqrt(n);
        for (double& v : a) v /= n;
        out.push_back(a);
    }
    return out;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

/// -sum p log2 p for p proportional to exp(kappa * s), computed without shifts.
inline double entropy_bits(const std::vector<double>& sims, double kappa) {
    std::vector<double> w;
    double z = 0.0;
    for (double s : sims) {
        w.push_back(std::exp(kappa * s));
        z += w.back();
    }
    double h = 0.0;
    for (double v : w) {
        const double p = v / z;
        if (p > 0.0) h -= p * std::log2(p);
    }
    return h;
}

/// Concentration whose entropy is closest to `target`, by a dense log-spaced
/// grid followed by a local refinement grid.
inline double grid_kappa(const std::vector<double>& sims, double target) {
    double best = 1e-2;
    double best_err = 1e300;
    for (int i = 0; i <= 6000; ++i) {
        const double k = std::pow(10.0, -2.0 + 5.0 * i / 6000.0);
        const double err = std::abs(entropy_bits(sims, k) - target);
        if (err < best_err) {
            best_err = err;
            best = k;
        }
    }
    const double lo = best / std::pow(10.0, 5.0 / 6000.0);
    const double hi = best * std::pow(10.0, 5.0 / 6000.0);
    for (int i = 0; i <= 20000; ++i) {
        const double k = lo + (hi - lo) * i / 20000.0;
        const double err = std::abs(entropy_bits(sims, k) - target);
        if (err < best_err) {
            best_err = err;
            best = k;
        }
    }
    return best;
}

/// p_ij = (p_{j|i} + p_{i|j}) / (2b) with p_{j|i} = exp(k_i z_i.z_j) / sum_{l != i} exp(k_i z_i.z_l).
inline Mat symmetric_sne(const Mat& z, const std::vector<double>& kappas) {
    const std::size_t b = z.size();
    Mat cond(b, std::vector<double>(b, 0.0));
    for (std::size_t i = 0; i < b; ++i) {
        double denom = 0.0;
        for (std::size_t l = 0; l < b; ++l) {
            if (l != i) denom += std::exp(kappas[i] * dot(z[i], z[l]));
        }
        for (std::size_t j = 0; j < b; ++j) {
            if (j != i) cond[i][j] = std::exp(kappas[i] * dot(z[i], z[j])) / denom;
        }
    }
    Mat p(b, std::vector<double>(b, 0.0));
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = 0; j < b; ++j) {
            if (i != j) p[i][j] = (cond[i][j] + cond[j][i]) / (2.0 * static_cast<double>(b));
        }
    }
    return p;
}

inline Mat q_matrix(const Mat& z, double tau) {
    return symmetric_sne(z, std::vector<double>(z.size(), 1.0 / tau));
}

inline double kl(const Mat& p, const Mat& q) {
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        for (std::size_t j = 0; j < p.size(); ++j) {
            if (i != j && p[i][j] > 0.0) s += p[i][j] * std::log(p[i][j] / q[i][j]);
        }
    }
    return s;
}

inline std::vector<double> sharpen(const std::vector<double>& p, double t) {
    std::vector<double> out;
    double z = 0.0;
    for (double v : p) {
        out.push_back(std::pow(v, 1.0 / t));
        z += out.back();
    }
    for (double& v : out) v /= z;
    return out;
}

inline std::vector<double> joint_sharpen(const std::vector<double>& a, const std::vector<double>& b, double t) {
    std::vector<double> out;
    double z = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        out.push_back(std::pow(a[i] * b[i], 1.0 / (2.0 * t)));
        z += out.back();
    }
    for (double& v : out) v /= z;
    return out;
}

/// softmax(zq . zs / tau) mixed with ys, one row per query.
inline Mat predict(const Mat& zq, const Mat& zs, const Mat& ys, double tau) {
    Mat out;
    for (const auto& q : zq) {
        std::vector<double> w;
        double z = 0.0;
        for (const auto& s : zs) {
            w.push_back(std::exp(dot(q, s) / tau));
            z += w.back();
        }
        std::vector<double> p(ys[0].size(), 0.0);
        for (std::size_t j = 0; j < zs.size(); ++j) {
            for (std::size_t c = 0; c < p.size(); ++c) p[c] += w[j] / z * ys[j][c];
        }
        out.push_back(p);
    }
    return out;
}

struct PawsTargets {
    Mat view1, view2, local;
};

/// Per-item targets: consistency uses the other global view's sharpened
/// prediction (local views get the mean of the two); pseudolabel uses the
/// joint sharpening for every view.
inline PawsTargets paws_targets(const Mat& p1, const Mat& p2, bool pseudolabel, double t) {
    PawsTargets out;
    for (std::size_t i = 0; i < p1.size(); ++i) {
        if (pseudolabel) {
            const auto j = joint_sharpen(p1[i], p2[i], t);
            out.view1.push_back(j);
            out.view2.push_back(j);
            out.local.push_back(j);
        } else {
            const auto a = sharpen(p2[i], t);
            const auto b = sharpen(p1[i], t);
            std::vector<double> m(a.size());
            for (std::size_t c = 0; c < a.size(); ++c) m[c] = 0.5 * (a[c] + b[c]);
            out.view1.push_back(a);
            out.view2.push_back(b);
            out.local.push_back(m);
        }
    }
    return out;
}

/// Mean cross-entropy of every anchor row against its (constant) target, plus
/// sum pbar log pbar where pbar is the mean sharpened anchor prediction.
inline double paws_loss(const Mat& p1, const Mat& p2, const std::vector<Mat>& locals, const PawsTargets& tg,
                        double t, bool me_max) {
    std::vector<const Mat*> anchors{&p1, &p2};
    std::vector<const Mat*> targets{&tg.view1, &tg.view2};
    for (const auto& l : locals) {
        anchors.push_back(&l);
        targets.push_back(&tg.local);
    }
    double ce = 0.0;
    double rows = 0.0;
    std::vector<double> pbar(p1[0].size(), 0.0);
    for (std::size_t v = 0; v < anchors.size(); ++v) {
        for (std::size_t i = 0; i < anchors[v]->size(); ++i) {
            const auto& p = (*anchors[v])[i];
            const auto& y = (*targets[v])[i];
            for (std::size_t c = 0; c < p.size(); ++c) {
                if (y[c] > 0.0) ce -= y[c] * std::log(p[c]);
            }
            const auto s = sharpen(p, t);
            for (std::size_t c = 0; c < p.size(); ++c) pbar[c] += s[c];
            rows += 1.0;
        }
    }
    double loss = ce / rows;
    if (me_max) {
        for (double& v : pbar) {
            v /= rows;
            if (v > 0.0) loss += v * std::log(v);
        }
    }
    return loss;
}

/// Element-wise relative error |a - n| / max(|a|, |n|, floor).
inline double relative_error(double a, double n, double floor = 1e-4) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

/// Largest relative error between analytic gradients and central differences
/// of `loss` over every head parameter.
inline double max_fd_error(protopaws::ProjectionHead<double> head,
                           const protopaws::HeadGradients<double>& analytic,
                           const std::function<double(const protopaws::ProjectionHead<double>&)>& loss,
                           double h = 1e-5) {
    double worst = 0.0;
    for (std::size_t l = 0; l < 3; ++l) {
        auto probe = [&](double& param, double grad) {
            const double saved = param;
            param = saved + h;
            const double up = loss(head);
            param = saved - h;
            const double down = loss(head);
            param = saved;
            worst = std::max(worst, relative_error(grad, (up - down) / (2.0 * h)));
        };
        auto& layer = head.layers[l];
        for (Eigen::Index i = 0; i < layer.weight.size(); ++i) {
            probe(layer.weight.data()[i], analytic.layers[l].weight.data()[i]);
        }
        for (Eigen::Index i = 0; i < layer.bias.size(); ++i) probe(layer.bias[i], analytic.layers[l].bias[i]);
    }
    return worst;
}

} // namespace oracle
