#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>

namespace protopaws {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using RowMatrixXf = RowMatrix<float>;
using RowMatrixXd = RowMatrix<double>;

/// All stochastic operations take this generator explicitly; callers own the seed.
using Rng = std::mt19937_64;

using ClassId = std::int32_t;

} // namespace protopaws
