#include "protopaws/nn.hpp"

#include "protopaws/errors.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>

namespace protopaws {

template struct ProjectionHead<float>;
template struct ProjectionHead<double>;

namespace {

template <typename Scalar>
Scalar gelu(Scalar x) {
    return Scalar(0.5) * x * (Scalar(1) + std::erf(x * Scalar(std::numbers::sqrt2 / 2.0)));
}

template <typename Scalar>
Scalar gelu_derivative(Scalar x) {
    const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(x * Scalar(std::numbers::sqrt2 / 2.0)));
    const Scalar pdf = std::exp(Scalar(-0.5) * x * x) * Scalar(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
    return cdf + x * pdf;
}

template <typename Scalar>
RowMatrix<Scalar> affine(const DenseLayer<Scalar>& layer, const RowMatrix<Scalar>& x) {
    RowMatrix<Scalar> out = x * layer.weight.transpose();
    out.rowwise() += layer.bias.transpose();
    return out;
}

template <typename Scalar>
void layer_backward(const DenseLayer<Scalar>& layer, const RowMatrix<Scalar>& layer_input,
                    const RowMatrix<Scalar>& d_out, DenseLayer<Scalar>& grad,
                    RowMatrix<Scalar>* d_input = nullptr) {
    grad.weight.noalias() = d_out.transpose() * layer_input;
    grad.bias = d_out.colwise().sum().transpose();
    if (d_input) d_input->noalias() = d_out * layer.weight;
}

template <typename Scalar>
double squared_norm(std::span<const Scalar> v) {
    double s = 0.0;
    for (Scalar x : v) s += static_cast<double>(x) * static_cast<double>(x);
    return s;
}

} // namespace

template <typename Scalar>
ProjectionHead<Scalar> init_head(Eigen::Index in_dim, Eigen::Index hidden_dim, Eigen::Index out_dim,
                                 Rng& rng) {
    require(in_dim >= 1 && hidden_dim >= 1 && out_dim >= 1, "init_head: dims must be >= 1");
    const std::array<std::pair<Eigen::Index, Eigen::Index>, 3> shapes{
        {{hidden_dim, in_dim}, {hidden_dim, hidden_dim}, {out_dim, hidden_dim}}};
    ProjectionHead<Scalar> head;
    for (std::size_t l = 0; l < 3; ++l) {
        const auto [rows, cols] = shapes[l];
        std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(cols)));
        head.layers[l].weight.resize(rows, cols);
        for (Eigen::Index i = 0; i < head.layers[l].weight.size(); ++i) {
            head.layers[l].weight.data()[i] = static_cast<Scalar>(dist(rng));
        }
        head.layers[l].bias = Vector<Scalar>::Zero(rows);
    }
    return head;
}

template <typename Scalar>
ForwardCache<Scalar> forward_with_cache(const ProjectionHead<Scalar>& head, const RowMatrix<Scalar>& x) {
    require(x.cols() == head.in_dim(), "forward_project: input width does not match head");
    ForwardCache<Scalar> c;
    c.input = x;
    c.pre1 = affine(head.layers[0], x);
    c.act1 = c.pre1.unaryExpr([](Scalar v) { return gelu(v); });
    c.pre2 = affine(head.layers[1], c.act1);
    c.act2 = c.pre2.unaryExpr([](Scalar v) { return gelu(v); });
    c.raw = affine(head.layers[2], c.act2);
    c.norms = c.raw.rowwise().norm();
    c.output.resize(c.raw.rows(), c.raw.cols());
    for (Eigen::Index i = 0; i < c.raw.rows(); ++i) {
        if (!(c.norms(i) >= Scalar(1e-12))) {
            throw NumericError("forward_project: degenerate head output (norm < 1e-12)");
        }
        c.output.row(i) = c.raw.row(i) / c.norms(i);
    }
    return c;
}

template <typename Scalar>
RowMatrix<Scalar> forward_project(const ProjectionHead<Scalar>& head, const RowMatrix<Scalar>& x) {
    return forward_with_cache(head, x).output;
}

template <typename Scalar>
HeadGradients<Scalar> backward_gradients(const ProjectionHead<Scalar>& head,
                                         const ForwardCache<Scalar>& cache,
                                         const RowMatrix<Scalar>& upstream) {
    if (upstream.rows() != cache.output.rows() || upstream.cols() != cache.output.cols()) {
        throw ContractError("backward_gradients: upstream shape does not match forward output");
    }
    // d/dy of y/||y||: (dz - z (z . dz)) / ||y||
    const Vector<Scalar> along = (upstream.cwiseProduct(cache.output)).rowwise().sum();
    RowMatrix<Scalar> d_raw = (upstream.array() - cache.output.array().colwise() * along.array()).matrix();
    d_raw.array().colwise() /= cache.norms.array();

    HeadGradients<Scalar> g;
    RowMatrix<Scalar> d_act2;
    layer_backward(head.layers[2], cache.act2, d_raw, g.layers[2], &d_act2);
    RowMatrix<Scalar> d_pre2 =
        d_act2.cwiseProduct(cache.pre2.unaryExpr([](Scalar v) { return gelu_derivative(v); }));
    RowMatrix<Scalar> d_act1;
    layer_backward(head.layers[1], cache.act1, d_pre2, g.layers[1], &d_act1);
    RowMatrix<Scalar> d_pre1 =
        d_act1.cwiseProduct(cache.pre1.unaryExpr([](Scalar v) { return gelu_derivative(v); }));
    layer_backward<Scalar>(head.layers[0], cache.input, d_pre1, g.layers[0]);
    return g;
}

template <typename Scalar>
HeadGradients<Scalar> backward_gradients(const ProjectionHead<Scalar>& head, const RowMatrix<Scalar>& x,
                                         const RowMatrix<Scalar>& upstream) {
    return backward_gradients(head, forward_with_cache(head, x), upstream);
}

template <typename Scalar>
LarsState<Scalar> make_lars_state(const ProjectionHead<Scalar>& head, const LarsConfig& config) {
    return LarsState<Scalar>{config, head.zeros_like()};
}

template <typename Scalar>
void lars_update(LarsState<Scalar>& state, ProjectionHead<Scalar>& head,
                 const HeadGradients<Scalar>& grads, double lr) {
    const LarsConfig& cfg = state.config;
    for (std::size_t l = 0; l < head.layers.size(); ++l) {
        auto& layer = head.layers[l];
        const auto& g_layer = grads.layers[l];
        auto& m_layer = state.momentum.layers[l];
        if (g_layer.weight.rows() != layer.weight.rows() || g_layer.weight.cols() != layer.weight.cols() ||
            g_layer.bias.size() != layer.bias.size() || m_layer.weight.size() != layer.weight.size()) {
            throw ContractError("lars_update: gradient or buffer shape mismatch");
        }
        if (!g_layer.weight.allFinite() || !g_layer.bias.allFinite()) {
            throw NumericError("lars_update: non-finite gradient");
        }

        RowMatrix<double> update = g_layer.weight.template cast<double>() +
                                   cfg.weight_decay * layer.weight.template cast<double>();
        const double w_norm = std::sqrt(squared_norm<Scalar>({layer.weight.data(),
                                                              static_cast<std::size_t>(layer.weight.size())}));
        const double u_norm = update.norm();
        const double local = (w_norm > 0.0 && u_norm > 0.0) ? cfg.trust * w_norm / (u_norm + cfg.eps) : 1.0;
        m_layer.weight = (cfg.momentum * m_layer.weight.template cast<double>() + (local * lr) * update)
                             .template cast<Scalar>();
        layer.weight -= m_layer.weight;

        m_layer.bias = (cfg.momentum * m_layer.bias.template cast<double>() +
                        lr * g_layer.bias.template cast<double>())
                           .template cast<Scalar>();
        layer.bias -= m_layer.bias;
    }
}

void LrSchedule::validate() const {
    require(warmup_steps > 0 && warmup_steps < total_steps, "LrSchedule: need 0 < warmup < total");
    require(start_lr >= 0.0 && max_lr >= 0.0 && final_lr >= 0.0, "LrSchedule: rates must be >= 0");
}

LrSchedule make_schedule(std::int64_t steps_per_epoch, std::int64_t epochs, std::int64_t warmup_epochs,
                         double start_lr, double max_lr, double final_lr) {
    LrSchedule s;
    s.start_lr = start_lr;
    s.max_lr = max_lr;
    s.final_lr = final_lr;
    s.total_steps = std::max<std::int64_t>(2, steps_per_epoch * epochs);
    s.warmup_steps = std::clamp<std::int64_t>(steps_per_epoch * warmup_epochs, 1, s.total_steps - 1);
    s.validate();
    return s;
}

double lr_at(const LrSchedule& sched, std::int64_t step) {
    sched.validate();
    if (step < 0 || step > sched.total_steps) throw ContractError("lr_at: step out of range");
    if (step <= sched.warmup_steps) {
        const double frac = static_cast<double>(step) / static_cast<double>(sched.warmup_steps);
        return sched.start_lr + (sched.max_lr - sched.start_lr) * frac;
    }
    const double t = static_cast<double>(step - sched.warmup_steps) /
                     static_cast<double>(sched.total_steps - sched.warmup_steps);
    return sched.final_lr + 0.5 * (sched.max_lr - sched.final_lr) * (1.0 + std::cos(std::numbers::pi * t));
}

std::vector<double> softmax(std::span<const double> scores, double tau) {
    require(tau > 0.0, "softmax: temperature must be positive");
    std::vector<double> out(scores.size());
    if (scores.empty()) return out;
    double hi = scores[0];
    for (double s : scores) hi = std::max(hi, s);
    double total = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        out[i] = std::exp((scores[i] - hi) / tau);
        total += out[i];
    }
    for (double& v : out) v /= total;
    return out;
}

namespace {
constexpr char kHeadMagic[4] = {'P', 'P', 'H', '1'};
}

void save_head(const ProjectionHead<float>& head, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write head checkpoint " + path.string());
    out.write(kHeadMagic, 4);
    const std::uint32_t dims[3] = {static_cast<std::uint32_t>(head.in_dim()),
                                   static_cast<std::uint32_t>(head.hidden_dim()),
                                   static_cast<std::uint32_t>(head.out_dim())};
    out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    ProjectionHead<float> copy = head;
    for_each_tensor(copy, [&](std::span<float> t, bool) {
        out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size_bytes()));
    });
    if (!out) throw IoError("write failed for " + path.string());
}

ProjectionHead<float> load_head(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open head checkpoint " + path.string());
    char magic[4];
    std::uint32_t dims[3];
    if (!in.read(magic, 4) || std::memcmp(magic, kHeadMagic, 4) != 0) {
        throw FormatError("head checkpoint: bad magic");
    }
    if (!in.read(reinterpret_cast<char*>(dims), sizeof(dims))) {
        throw FormatError("head checkpoint: truncated dims");
    }
    if (dims[0] == 0 || dims[1] == 0 || dims[2] == 0) throw FormatError("head checkpoint: zero dimension");
    ProjectionHead<float> head;
    head.layers[0].weight.resize(dims[1], dims[0]);
    head.layers[1].weight.resize(dims[1], dims[1]);
    head.layers[2].weight.resize(dims[2], dims[1]);
    head.layers[0].bias.resize(dims[1]);
    head.layers[1].bias.resize(dims[1]);
    head.layers[2].bias.resize(dims[2]);
    for_each_tensor(head, [&](std::span<float> t, bool) {
        if (!in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size_bytes()))) {
            throw FormatError("head checkpoint: truncated parameters");
        }
    });
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError("head checkpoint: trailing bytes");
    return head;
}

#define PROTOPAWS_INSTANTIATE_NN(S)                                                                   \
    template ProjectionHead<S> init_head<S>(Eigen::Index, Eigen::Index, Eigen::Index, Rng&);           \
    template RowMatrix<S> forward_project<S>(const ProjectionHead<S>&, const RowMatrix<S>&);          \
    template ForwardCache<S> forward_with_cache<S>(const ProjectionHead<S>&, const RowMatrix<S>&);    \
    template HeadGradients<S> backward_gradients<S>(const ProjectionHead<S>&, const ForwardCache<S>&, \
                                                    const RowMatrix<S>&);                             \
    template HeadGradients<S> backward_gradients<S>(const ProjectionHead<S>&, const RowMatrix<S>&,    \
                                                    const RowMatrix<S>&);                             \
    template LarsState<S> make_lars_state<S>(const ProjectionHead<S>&, const LarsConfig&);            \
    template void lars_update<S>(LarsState<S>&, ProjectionHead<S>&, const HeadGradients<S>&, double);

PROTOPAWS_INSTANTIATE_NN(float)
PROTOPAWS_INSTANTIATE_NN(double)

#undef PROTOPAWS_INSTANTIATE_NN

} // namespace protopaws
