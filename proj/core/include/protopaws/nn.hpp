#pragma once

#include "protopaws/types.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace protopaws {

template <typename Scalar>
struct DenseLayer {
    RowMatrix<Scalar> weight; ///< out x in
    Vector<Scalar> bias;      ///< out

    bool operator==(const DenseLayer& o) const { return weight == o.weight && bias == o.bias; }
};

/**
 * Three-layer MLP g: R^in -> R^out with GELU after the first two layers and a
 * unit-norm output row per input row.
 */
template <typename Scalar>
struct ProjectionHead {
    std::array<DenseLayer<Scalar>, 3> layers;

    Eigen::Index in_dim() const { return layers[0].weight.cols(); }
    Eigen::Index hidden_dim() const { return layers[0].weight.rows(); }
    Eigen::Index out_dim() const { return layers[2].weight.rows(); }

    template <typename To>
    ProjectionHead<To> cast() const {
        ProjectionHead<To> out;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            out.layers[i].weight = layers[i].weight.template cast<To>();
            out.layers[i].bias = layers[i].bias.template cast<To>();
        }
        return out;
    }

    /// Same-shaped head with every parameter zero.
    ProjectionHead zeros_like() const {
        ProjectionHead out;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            out.layers[i].weight = RowMatrix<Scalar>::Zero(layers[i].weight.rows(), layers[i].weight.cols());
            out.layers[i].bias = Vector<Scalar>::Zero(layers[i].bias.size());
        }
        return out;
    }

    bool operator==(const ProjectionHead&) const = default;
};

/// Parameter gradients share the head's layout.
template <typename Scalar>
using HeadGradients = ProjectionHead<Scalar>;

/// A scalar objective and its gradient with respect to every head parameter.
template <typename Scalar>
struct LossAndGradients {
    double loss = 0.0;
    HeadGradients<Scalar> grads;
};

/// Calls fn(tensor_values, is_bias) for W1, b1, W2, b2, W3, b3 in that order.
template <typename Scalar, typename Fn>
void for_each_tensor(ProjectionHead<Scalar>& head, Fn&& fn) {
    for (auto& layer : head.layers) {
        fn(std::span<Scalar>(layer.weight.data(), static_cast<std::size_t>(layer.weight.size())), false);
        fn(std::span<Scalar>(layer.bias.data(), static_cast<std::size_t>(layer.bias.size())), true);
    }
}

template <typename Scalar>
struct ForwardCache {
    RowMatrix<Scalar> input;
    RowMatrix<Scalar> pre1, act1;
    RowMatrix<Scalar> pre2, act2;
    RowMatrix<Scalar> raw;  ///< last affine output before normalisation
    Vector<Scalar> norms;   ///< row norms of `raw`
    RowMatrix<Scalar> output;
};

/// Weights ~ N(0, 1/fan_in), biases zero. Drawn in double so float and double
/// heads from the same seed agree up to rounding.
template <typename Scalar>
ProjectionHead<Scalar> init_head(Eigen::Index in_dim, Eigen::Index hidden_dim, Eigen::Index out_dim,
                                 Rng& rng);

/// Row-wise g(x)/||g(x)||. Throws NumericError if a pre-normalisation row has
/// norm below 1e-12.
template <typename Scalar>
RowMatrix<Scalar> forward_project(const ProjectionHead<Scalar>& head, const RowMatrix<Scalar>& x);

template <typename Scalar>
ForwardCache<Scalar> forward_with_cache(const ProjectionHead<Scalar>& head, const RowMatrix<Scalar>& x);

/// Reverse-mode gradients of a scalar loss given dLoss/dOutput, including the
/// Jacobian of the output normalisation.
template <typename Scalar>
HeadGradients<Scalar> backward_gradients(const ProjectionHead<Scalar>& head,
                                         const ForwardCache<Scalar>& cache,
                                         const RowMatrix<Scalar>& upstream);

template <typename Scalar>
HeadGradients<Scalar> backward_gradients(const ProjectionHead<Scalar>& head, const RowMatrix<Scalar>& x,
                                         const RowMatrix<Scalar>& upstream);

struct LarsConfig {
    double momentum = 0.9;
    double weight_decay = 1e-6;
    double trust = 0.001;
    double eps = 1e-9;
};

template <typename Scalar>
struct LarsState {
    LarsConfig config;
    ProjectionHead<Scalar> momentum;
};

template <typename Scalar>
LarsState<Scalar> make_lars_state(const ProjectionHead<Scalar>& head, const LarsConfig& config = {});

/**
 * One LARS-SGD step, in place.
 *
 * Weight matrices: u = g + wd*w, r = trust*||w||/(||u|| + eps) (r = 1 when
 * either norm is zero), m <- mu*m + r*lr*u, w <- w - m.
 * Biases: m <- mu*m + lr*g, b <- b - m.
 */
template <typename Scalar>
void lars_update(LarsState<Scalar>& state, ProjectionHead<Scalar>& head,
                 const HeadGradients<Scalar>& grads, double lr);

/// Linear warmup from start_lr to max_lr, then cosine annealing to final_lr.
struct LrSchedule {
    double start_lr = 0.3;
    double max_lr = 6.4;
    double final_lr = 0.064;
    std::int64_t warmup_steps = 1;
    std::int64_t total_steps = 2;

    void validate() const;
};

/// Schedule over `epochs * steps_per_epoch` steps. Warmup is clamped so that
/// 0 < warmup_steps < total_steps always holds.
LrSchedule make_schedule(std::int64_t steps_per_epoch, std::int64_t epochs, std::int64_t warmup_epochs,
                         double start_lr = 0.3, double max_lr = 6.4, double final_lr = 0.064);

double lr_at(const LrSchedule& sched, std::int64_t step);

/// Max-subtracted softmax of scores/tau.
std::vector<double> softmax(std::span<const double> scores, double tau);

/// Checkpoint: magic "PPH1", u32 in/hidden/out, then W1 b1 W2 b2 W3 b3 as
/// little-endian float32, row-major.
void save_head(const ProjectionHead<float>& head, const std::filesystem::path& path);
ProjectionHead<float> load_head(const std::filesystem::path& path);

extern template struct ProjectionHead<float>;
extern template struct ProjectionHead<double>;

} // namespace protopaws
