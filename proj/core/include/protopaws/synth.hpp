#pragma once

#include "protopaws/embedding_store.hpp"
#include "protopaws/types.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace protopaws {

/// Exact von Mises-Fisher draw (Wood's rejection sampler). Requires a unit
/// `mu` of dimension >= 2 and kappa >= 0.
Vector<double> sample_vmf(const Vector<double>& mu, double kappa, Rng& rng);

/// Mean resultant length A_d(kappa) = I_{d/2}(kappa) / I_{d/2-1}(kappa) for d = 3.
double mean_resultant_length_3d(double kappa);

struct MixtureSpec {
    std::uint32_t n_classes = 10;
    std::vector<std::uint32_t> points_per_class; ///< one count per class
    std::uint32_t dim = 64;
    double class_kappa = 100.0; ///< spread of canonical points around the class mean
    double view_kappa = 200.0;  ///< spread of views around their canonical point
    std::uint32_t n_global = 4;
    std::uint32_t n_local = 8;
    std::uint64_t seed = 0;

    /// Same count for every class.
    static MixtureSpec balanced(std::uint32_t n_classes, std::uint32_t per_class, std::uint32_t dim);

    void validate() const;
};

/// Orthonormal class means (QR of a Gaussian matrix), canonical points around
/// them, and view pools around each canonical point. Items are grouped by
/// class in label order. Each class draws from its own seed derived from
/// `spec.seed`, so the result does not depend on the thread count.
EmbeddingDataset gen_mixture(const MixtureSpec& spec);

/// The class means gen_mixture uses for `spec` (dim x n_classes, orthonormal columns).
RowMatrixXd mixture_means(const MixtureSpec& spec);

} // namespace protopaws
