// SPDX-License-Identifier: Apache-2.0
//
// Numerical core: Gram-matrix truncated SVD of wide trajectory matrices,
// a cyclic Jacobi symmetric eigensolver, closed-form least squares, and
// single-component PLS regression.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "trajex/trajectory.hpp"

namespace trajex {

/// Dense row-major float64 matrix.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
    std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }
    std::vector<double> column(std::size_t j) const;

    /// Leading principal block of size n x n.
    Matrix leading(std::size_t n) const;

    double frobenius_norm() const;
    const std::vector<double>& data() const { return data_; }
    /// Moves the storage out, leaving an empty 0 x 0 matrix.
    std::vector<double> release() {
        rows_ = cols_ = 0;
        return std::move(data_);
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// G[i][j] = <row_i, row_j>; blocks of kBlockElements are summed plainly and
/// combined across blocks with compensated summation. Upper triangle computed,
/// lower mirrored.
Matrix gram_matrix(const TrajectoryMatrix& traj);

/// Gram matrix of `traj` given the Gram matrix of its first prefix.rows()
/// rows: only the bordered rows and columns are accumulated. Equal bit for bit
/// to gram_matrix(traj).
Matrix extend_gram(const Matrix& prefix, const TrajectoryMatrix& traj);

struct SymEigen {
    std::vector<double> values;  ///< descending
    Matrix vectors;              ///< column k pairs with values[k]
    int sweeps = 0;
};

/// Cyclic Jacobi. Converged when the off-diagonal Frobenius norm is at most
/// 1e-14 * ||G||_F; gives up after 30 sweeps (NoConvergence).
SymEigen sym_eigendecomp(const Matrix& g);

enum class DegeneratePolicy {
    Throw,  ///< NearZeroSingularValue when sigma_r < 1e-12 * sigma_1 or lambda_r is rounding noise
    Keep,   ///< return degenerate trailing components as computed
};

struct SpectralDecomposition {
    std::size_t rank = 0;
    std::vector<std::int64_t> steps;
    std::vector<double> singular_values;  ///< non-increasing
    Matrix left_vectors;                  ///< T x r
    Matrix right_vectors;                 ///< r x d, unit rows
    Matrix coefficients;                  ///< T x r, left_vectors * diag(singular_values)

    std::vector<double> coefficient_series(std::size_t k) const { return coefficients.column(k); }
};

/// Rank-r SVD via the T x T Gram matrix: eigenpairs of G give U and sigma; the
/// right vectors are M^T u_k, accumulated in one streaming pass and
/// normalised. Each component is oriented so its coefficient series has a
/// non-negative least-squares slope against the step values (ties broken by
/// a non-negative last coefficient).
SpectralDecomposition truncated_svd(const TrajectoryMatrix& traj, std::size_t rank,
                                    DegeneratePolicy policy = DegeneratePolicy::Throw);

/// Same as truncated_svd() with a precomputed Gram matrix (e.g. the leading
/// block of a longer window's Gram matrix).
SpectralDecomposition truncated_svd_from_gram(const TrajectoryMatrix& traj, const Matrix& gram, std::size_t rank,
                                              DegeneratePolicy policy = DegeneratePolicy::Throw);

/// True when the (steps, coefficients) series should be negated to satisfy the
/// orientation rule above.
bool needs_flip(std::span<const std::int64_t> steps, std::span<const double> coefficients);

struct LinearFit {
    double a = 0.0;  ///< slope per step
    double b = 0.0;  ///< intercept
    double r_squared = 0.0;

    double evaluate(double t) const { return a * t + b; }
};

/// Ordinary least squares line: a = Cov(t, c) / Var(t), b = mean(c) - a mean(t).
LinearFit linear_fit(std::span<const double> ts, std::span<const double> cs);

struct PolyFit {
    int order = 0;
    std::vector<double> coeffs;  ///< ascending powers of t

    double center = 0.0;  ///< t is mapped to z = (t - center) / scale for evaluation
    double scale = 1.0;
    std::vector<double> scaled_coeffs;  ///< ascending powers of z

    double evaluate(double t) const;
};

/// Least-squares polynomial through the normal equations on a Vandermonde
/// basis in z = (t - center) / scale, z in [-1, 1].
PolyFit poly_fit(std::span<const double> ts, std::span<const double> cs, int order);

/// One-component PLS1 model.
struct Pls1Model {
    std::vector<double> weights;   ///< w, unit norm
    std::vector<double> loadings;  ///< p = X_c^T s / <s, s>
    double q = 0.0;                ///< y regression on the score
    std::vector<double> x_mean;
    double y_mean = 0.0;

    double predict(std::span<const double> x) const;
    /// The x whose score reproduces `y` on the fitted factor.
    std::vector<double> invert(double y) const;
};

Pls1Model pls1_fit(const Matrix& x, std::span<const double> y);

}  // namespace trajex
