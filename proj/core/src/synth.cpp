#include "protopaws/synth.hpp"

#include "protopaws/errors.hpp"
#include "protopaws/parallel.hpp"

#include <Eigen/QR>

#include <cmath>
#include <random>

namespace protopaws {

namespace {

Vector<double> gaussian_vector(Eigen::Index d, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector<double> v(d);
    for (Eigen::Index i = 0; i < d; ++i) v[i] = normal(rng);
    return v;
}

// Unit vector orthogonal to mu, uniform on that great sphere.
Vector<double> tangent_direction(const Vector<double>& mu, Rng& rng) {
    for (;;) {
        Vector<double> v = gaussian_vector(mu.size(), rng);
        v -= mu.dot(v) * mu;
        const double n = v.norm();
        if (n > 1e-12) return v / n;
    }
}

// Cosine W between the sample and mu, returned as (W, 1 - W) to keep
// precision when kappa is large.
std::pair<double, double> sample_cosine(double kappa, double d, Rng& rng) {
    const double m = d - 1.0;
    const double b = m / (2.0 * kappa + std::sqrt(4.0 * kappa * kappa + m * m));
    const double one_minus_x0 = 2.0 * b / (1.0 + b);
    const double log_one_minus_x0_sq = std::log(4.0 * b) - 2.0 * std::log1p(b);
    std::gamma_distribution<double> ga(m / 2.0, 1.0);
    std::gamma_distribution<double> gb(m / 2.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    for (;;) {
        const double ya = ga(rng);
        const double yb = gb(rng);
        if (ya + yb <= 0.0) continue;
        const double z = ya / (ya + yb);
        const double denom = 1.0 - (1.0 - b) * z;
        const double one_minus_w = 2.0 * b * z / denom;
        const double w = 1.0 - one_minus_w;
        const double one_minus_x0w = (one_minus_w + b * (1.0 + w)) / (1.0 + b);
        const double u = uniform(rng);
        if (u <= 0.0) continue;
        const double lhs = kappa * (one_minus_x0 - one_minus_w) + m * (std::log(one_minus_x0w) - log_one_minus_x0_sq);
        if (lhs >= std::log(u)) return {w, one_minus_w};
    }
}

} // namespace

Vector<double> sample_vmf(const Vector<double>& mu, double kappa, Rng& rng) {
    require(mu.size() >= 2, "sample_vmf: dimension must be >= 2");
    require(std::abs(mu.norm() - 1.0) < 1e-6, "sample_vmf: mu must be unit norm");
    require(kappa >= 0.0 && std::isfinite(kappa), "sample_vmf: kappa must be finite and >= 0");
    const auto [w, one_minus_w] = sample_cosine(kappa, static_cast<double>(mu.size()), rng);
    const Vector<double> v = tangent_direction(mu, rng);
    const double s = std::sqrt(std::max(0.0, one_minus_w * (1.0 + w)));
    Vector<double> x = w * mu + s * v;
    return x / x.norm();
}

double mean_resultant_length_3d(double kappa) {
    require(kappa > 0.0, "mean_resultant_length_3d: kappa must be > 0");
    return 1.0 / std::tanh(kappa) - 1.0 / kappa;
}

MixtureSpec MixtureSpec::balanced(std::uint32_t n_classes, std::uint32_t per_class, std::uint32_t dim) {
    MixtureSpec spec;
    spec.n_classes = n_classes;
    spec.points_per_class.assign(n_classes, per_class);
    spec.dim = dim;
    return spec;
}

void MixtureSpec::validate() const {
    require(n_classes >= 1, "MixtureSpec: n_classes must be >= 1");
    require(points_per_class.size() == n_classes, "MixtureSpec: points_per_class needs one count per class");
    for (auto c : points_per_class) require(c >= 1, "MixtureSpec: every class needs at least one point");
    require(dim >= 3, "MixtureSpec: dim must be >= 3");
    require(n_classes <= dim, "MixtureSpec: n_classes > dim, orthogonal class means impossible");
    require(class_kappa > 0.0 && view_kappa > 0.0, "MixtureSpec: kappas must be > 0");
    require(n_global >= 1, "MixtureSpec: n_global must be >= 1");
}

RowMatrixXd mixture_means(const MixtureSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd a(spec.dim, spec.n_classes);
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
        for (Eigen::Index i = 0; i < a.rows(); ++i) a(i, j) = normal(rng);
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(spec.dim, spec.n_classes);
    return q;
}

EmbeddingDataset gen_mixture(const MixtureSpec& spec) {
    const RowMatrixXd means = mixture_means(spec);
    const std::size_t d = spec.dim;

    EmbeddingDataset ds;
    ds.dim = spec.dim;
    ds.n_global = spec.n_global;
    ds.n_local = spec.n_local;
    ds.n_classes = spec.n_classes;
    std::vector<std::size_t> offsets(spec.n_classes + 1, 0);
    for (std::uint32_t c = 0; c < spec.n_classes; ++c) offsets[c + 1] = offsets[c] + spec.points_per_class[c];
    ds.n_items = static_cast<std::uint32_t>(offsets.back());
    ds.labels.emplace(ds.n_items);
    ds.canonical.resize(ds.n_items * d);
    ds.global_views.resize(static_cast<std::size_t>(ds.n_items) * spec.n_global * d);
    ds.local_views.resize(static_cast<std::size_t>(ds.n_items) * spec.n_local * d);

    auto store = [d](std::vector<float>& dst, std::size_t row, const Vector<double>& v) {
        for (std::size_t k = 0; k < d; ++k) dst[row * d + k] = static_cast<float>(v[static_cast<Eigen::Index>(k)]);
    };

    parallel_for(spec.n_classes, [&](std::size_t c) {
        std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                          static_cast<std::uint32_t>(c), 0x9e3779b9u};
        Rng rng(seq);
        const Vector<double> mean = means.col(static_cast<Eigen::Index>(c));
        for (std::size_t item = offsets[c]; item < offsets[c + 1]; ++item) {
            (*ds.labels)[item] = static_cast<ClassId>(c);
            const Vector<double> canon = sample_vmf(mean, spec.class_kappa, rng);
            store(ds.canonical, item, canon);
            for (std::size_t g = 0; g < spec.n_global; ++g) {
                store(ds.global_views, item * spec.n_global + g, sample_vmf(canon, spec.view_kappa, rng));
            }
            for (std::size_t l = 0; l < spec.n_local; ++l) {
                store(ds.local_views, item * spec.n_local + l, sample_vmf(canon, spec.view_kappa, rng));
            }
        }
    });

    normalize_rows(ds.canonical, d, "canonical");
    normalize_rows(ds.global_views, d, "global");
    normalize_rows(ds.local_views, d, "local");
    return ds;
}

} // namespace protopaws
