// SPDX-License-Identifier: Apache-2.0

#include "trajex/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/core.h>

#include "trajex/error.hpp"

namespace trajex {

namespace {

constexpr double kEigenTolerance = 1e-14;
constexpr int kMaxSweeps = 30;
constexpr double kSymmetryTolerance = 1e-10;
constexpr double kDegenerateSigma = 1e-12;
// Eigenvalues of G within this many n * eps * lambda_1 of zero are rounding
// noise; their square roots sit near 1e-8 sigma_1 rather than at zero.
constexpr double kEigenNoiseFactor = 16.0;

double off_diagonal_norm(const Matrix& a) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            if (i != j) sum += a(i, j) * a(i, j);
        }
    }
    return std::sqrt(sum);
}

void rotate(Matrix& a, Matrix& v, std::size_t p, std::size_t q) {
    const double apq = a(p, q);
    if (apq == 0.0) return;
    const double app = a(p, p);
    const double aqq = a(q, q);
    const double theta = (aqq - app) / (2.0 * apq);
    double t;
    if (std::fabs(theta) > 1e150) {
        t = 0.5 / theta;
    } else {
        t = std::copysign(1.0, theta) / (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
    }
    const double c = 1.0 / std::sqrt(t * t + 1.0);
    const double s = t * c;

    a(p, p) = app - t * apq;
    a(q, q) = aqq + t * apq;
    a(p, q) = 0.0;
    a(q, p) = 0.0;
    const std::size_t n = a.rows();
    for (std::size_t k = 0; k < n; ++k) {
        if (k == p || k == q) continue;
        const double akp = a(k, p);
        const double akq = a(k, q);
        const double new_kp = c * akp - s * akq;
        const double new_kq = s * akp + c * akq;
        a(k, p) = new_kp;
        a(p, k) = new_kp;
        a(k, q) = new_kq;
        a(q, k) = new_kq;
    }
    for (std::size_t k = 0; k < n; ++k) {
        const double vkp = v(k, p);
        const double vkq = v(k, q);
        v(k, p) = c * vkp - s * vkq;
        v(k, q) = s * vkp + c * vkq;
    }
}

// Solves a small dense system by Gaussian elimination with partial pivoting.
std::vector<double> solve_dense(Matrix a, std::vector<double> rhs) {
    const std::size_t n = a.rows();
    double scale = 0.0;
    for (double x : a.data()) scale = std::max(scale, std::fabs(x));
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < n; ++r) {
            if (std::fabs(a(r, col)) > std::fabs(a(pivot, col))) pivot = r;
        }
        if (scale == 0.0 || std::fabs(a(pivot, col)) <= 1e-13 * scale) {
            fail(ErrorKind::SingularSystem, "least-squares normal equations are singular");
        }
        if (pivot != col) {
            for (std::size_t j = 0; j < n; ++j) std::swap(a(col, j), a(pivot, j));
            std::swap(rhs[col], rhs[pivot]);
        }
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = a(r, col) / a(col, col);
            for (std::size_t j = col; j < n; ++j) a(r, j) -= f * a(col, j);
            rhs[r] -= f * rhs[col];
        }
    }
    std::vector<double> x(n);
    for (std::size_t i = n; i-- > 0;) {
        double s = rhs[i];
        for (std::size_t j = i + 1; j < n; ++j) s -= a(i, j) * x[j];
        x[i] = s / a(i, i);
    }
    return x;
}

double binomial(int n, int k) {
    double r = 1.0;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

}  // namespace

// --- Matrix -------------------------------------------------------------------

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

std::vector<double> Matrix::column(std::size_t j) const {
    std::vector<double> out(rows_);
    for (std::size_t i = 0; i < rows_; ++i) out[i] = (*this)(i, j);
    return out;
}

Matrix Matrix::leading(std::size_t n) const {
    if (n > rows_ || n > cols_) fail(ErrorKind::DimensionMismatch, "leading block larger than matrix");
    Matrix out(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) out(i, j) = (*this)(i, j);
    }
    return out;
}

double Matrix::frobenius_norm() const {
    double sum = 0.0;
    for (double x : data_) sum += x * x;
    return std::sqrt(sum);
}

// --- Gram matrix --------------------------------------------------------------

Matrix gram_matrix(const TrajectoryMatrix& traj) {
    const std::size_t n = traj.rows();
    std::vector<CompensatedSum> acc(n * (n + 1) / 2);
    traj.for_each_chunk([&](const RowChunk& c) {
        for (std::size_t block = 0; block < c.length; block += kBlockElements) {
            const std::size_t len = std::min(kBlockElements, c.length - block);
            std::size_t idx = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const double* ri = c.data + i * c.stride + block;
                for (std::size_t j = i; j < n; ++j) {
                    const double* rj = c.data + j * c.stride + block;
                    acc[idx++].add(block_dot(ri, rj, len));
                }
            }
        }
    });
    Matrix g(n, n);
    std::size_t idx = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i; j < n; ++j) {
            const double v = acc[idx++].value();
            g(i, j) = v;
            g(j, i) = v;
        }
    }
    return g;
}

Matrix extend_gram(const Matrix& prefix, const TrajectoryMatrix& traj) {
    const std::size_t n = traj.rows();
    const std::size_t p = prefix.rows();
    if (prefix.cols() != p || p > n) {
        fail(ErrorKind::DimensionMismatch, fmt::format("cannot extend a {}x{} Gram matrix to {} rows", p, prefix.cols(), n));
    }
    // New entries are (i, j) with j >= p and i <= j, in the same order and
    // with the same block reduction as gram_matrix().
    std::vector<CompensatedSum> acc;
    for (std::size_t j = p; j < n; ++j) acc.resize(acc.size() + j + 1);
    traj.for_each_chunk([&](const RowChunk& c) {
        for (std::size_t block = 0; block < c.length; block += kBlockElements) {
            const std::size_t len = std::min(kBlockElements, c.length - block);
            std::size_t idx = 0;
            for (std::size_t j = p; j < n; ++j) {
                const double* rj = c.data + j * c.stride + block;
                for (std::size_t i = 0; i <= j; ++i) {
                    acc[idx++].add(block_dot(c.data + i * c.stride + block, rj, len));
                }
            }
        }
    });
    Matrix g(n, n);
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = 0; j < p; ++j) g(i, j) = prefix(i, j);
    }
    std::size_t idx = 0;
    for (std::size_t j = p; j < n; ++j) {
        for (std::size_t i = 0; i <= j; ++i) {
            const double v = acc[idx++].value();
            g(i, j) = v;
            g(j, i) = v;
        }
    }
    return g;
}

// --- eigen ----------------------------------------------------------------------

SymEigen sym_eigendecomp(const Matrix& g) {
    const std::size_t n = g.rows();
    if (n != g.cols()) fail(ErrorKind::DimensionMismatch, "eigendecomposition needs a square matrix");
    const double norm = g.frobenius_norm();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (std::fabs(g(i, j) - g(j, i)) > kSymmetryTolerance * norm) {
                fail(ErrorKind::NotSymmetric, fmt::format("entries ({0},{1}) and ({1},{0}) differ", i, j));
            }
        }
    }

    Matrix a(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) a(i, j) = i <= j ? g(i, j) : g(j, i);
    }
    Matrix v = Matrix::identity(n);
    int sweeps = 0;
    bool converged = norm == 0.0 || off_diagonal_norm(a) <= kEigenTolerance * norm;
    while (!converged && sweeps < kMaxSweeps) {
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) rotate(a, v, p, q);
        }
        ++sweeps;
        converged = off_diagonal_norm(a) <= kEigenTolerance * norm;
    }
    if (!converged) {
        fail(ErrorKind::NoConvergence, fmt::format("Jacobi did not converge in {} sweeps", kMaxSweeps));
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });
    SymEigen out;
    out.sweeps = sweeps;
    out.values.resize(n);
    out.vectors = Matrix(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        out.values[k] = a(order[k], order[k]);
        for (std::size_t i = 0; i < n; ++i) out.vectors(i, k) = v(i, order[k]);
    }
    return out;
}

// --- truncated SVD --------------------------------------------------------------

bool needs_flip(std::span<const std::int64_t> steps, std::span<const double> coefficients) {
    const std::size_t n = coefficients.size();
    if (n == 0) return false;
    double scale = 0.0;
    for (double c : coefficients) scale = std::max(scale, std::fabs(c));
    if (n >= 2) {
        double t_mean = 0.0, c_mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            t_mean += static_cast<double>(steps[i]);
            c_mean += coefficients[i];
        }
        t_mean /= static_cast<double>(n);
        c_mean /= static_cast<double>(n);
        double sxy = 0.0, sxx = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double dt = static_cast<double>(steps[i]) - t_mean;
            sxy += dt * (coefficients[i] - c_mean);
            sxx += dt * dt;
        }
        if (sxx > 0.0) {
            const double slope = sxy / sxx;
            const double span = static_cast<double>(steps[n - 1] - steps[0]);
            // A slope whose effect over the window is at roundoff level counts as zero.
            if (std::fabs(slope) * span > 1e-12 * scale) return slope < 0.0;
        }
    }
    return coefficients[n - 1] < 0.0;
}

SpectralDecomposition truncated_svd(const TrajectoryMatrix& traj, std::size_t rank, DegeneratePolicy policy) {
    if (rank < 1 || rank > traj.rows()) {
        fail(ErrorKind::RankOutOfRange,
             fmt::format("rank {} outside [1, {}] for tensor '{}'", rank, traj.rows(), traj.tensor_name()));
    }
    return truncated_svd_from_gram(traj, gram_matrix(traj), rank, policy);
}

SpectralDecomposition truncated_svd_from_gram(const TrajectoryMatrix& traj, const Matrix& gram, std::size_t rank,
                                              DegeneratePolicy policy) {
    const std::size_t n = traj.rows();
    if (rank < 1 || rank > n) {
        fail(ErrorKind::RankOutOfRange,
             fmt::format("rank {} outside [1, {}] for tensor '{}'", rank, n, traj.tensor_name()));
    }
    if (gram.rows() != n || gram.cols() != n) {
        fail(ErrorKind::DimensionMismatch, fmt::format("Gram matrix is {}x{} for {} rows", gram.rows(), gram.cols(), n));
    }
    if (gram.frobenius_norm() == 0.0) {
        fail(ErrorKind::ZeroTrajectory, fmt::format("tensor '{}' has an all-zero trajectory", traj.tensor_name()));
    }

    const SymEigen eig = sym_eigendecomp(gram);
    SpectralDecomposition out;
    out.rank = rank;
    out.steps = traj.steps();
    out.singular_values.resize(rank);
    for (std::size_t k = 0; k < rank; ++k) out.singular_values[k] = std::sqrt(std::max(eig.values[k], 0.0));
    if (policy == DegeneratePolicy::Throw) {
        const double noise_floor =
            kEigenNoiseFactor * static_cast<double>(n) * std::numeric_limits<double>::epsilon() * eig.values[0];
        const double sigma_r = out.singular_values[rank - 1];
        if (sigma_r < kDegenerateSigma * out.singular_values[0] || eig.values[rank - 1] <= noise_floor) {
            fail(ErrorKind::NearZeroSingularValue,
                 fmt::format("tensor '{}': sigma_{} = {:.3g} is numerically zero next to sigma_1 = {:.3g}",
                             traj.tensor_name(), rank, sigma_r, out.singular_values[0]));
        }
    }

    out.left_vectors = Matrix(n, rank);
    for (std::size_t t = 0; t < n; ++t) {
        for (std::size_t k = 0; k < rank; ++k) out.left_vectors(t, k) = eig.vectors(t, k);
    }

    // Right vectors: w_k = M^T u_k, rows visited in step order.
    const std::size_t d = traj.dim();
    out.right_vectors = Matrix(rank, d);
    traj.for_each_chunk([&](const RowChunk& c) {
        for (std::size_t k = 0; k < rank; ++k) {
            double* w = out.right_vectors.row(k).data() + c.offset;
            for (std::size_t t = 0; t < n; ++t) {
                const double u = out.left_vectors(t, k);
                const auto r = c.row(t);
                for (std::size_t i = 0; i < c.length; ++i) w[i] += u * r[i];
            }
        }
    });
    for (std::size_t k = 0; k < rank; ++k) {
        auto w = out.right_vectors.row(k);
        CompensatedSum ss;
        accumulate_dot(w, w, ss);
        const double norm = std::sqrt(ss.value());
        if (norm > 0.0) {
            for (double& x : w) x /= norm;
        }
    }

    out.coefficients = Matrix(n, rank);
    for (std::size_t k = 0; k < rank; ++k) {
        for (std::size_t t = 0; t < n; ++t) out.coefficients(t, k) = out.left_vectors(t, k) * out.singular_values[k];
        const std::vector<double> series = out.coefficients.column(k);
        if (needs_flip(out.steps, series)) {
            for (std::size_t t = 0; t < n; ++t) {
                out.left_vectors(t, k) = -out.left_vectors(t, k);
                out.coefficients(t, k) = -out.coefficients(t, k);
            }
            for (double& x : out.right_vectors.row(k)) x = -x;
        }
    }
    return out;
}

// --- least squares ----------------------------------------------------------------

LinearFit linear_fit(std::span<const double> ts, std::span<const double> cs) {
    if (ts.size() != cs.size()) fail(ErrorKind::DimensionMismatch, "abscissa and ordinate lengths differ");
    const std::size_t n = ts.size();
    if (n < 2) fail(ErrorKind::TooFewPoints, fmt::format("linear fit needs at least 2 points, got {}", n));
    double t_mean = 0.0, c_mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        t_mean += ts[i];
        c_mean += cs[i];
    }
    t_mean /= static_cast<double>(n);
    c_mean /= static_cast<double>(n);
    double sxx = 0.0, sxy = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dt = ts[i] - t_mean;
        const double dc = cs[i] - c_mean;
        sxx += dt * dt;
        sxy += dt * dc;
        ss_tot += dc * dc;
    }
    if (sxx == 0.0) fail(ErrorKind::DegenerateAbscissa, "all abscissae are equal");

    LinearFit fit;
    fit.a = sxy / sxx;
    fit.b = c_mean - fit.a * t_mean;
    double ss_res = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = cs[i] - fit.evaluate(ts[i]);
        ss_res += r * r;
    }
    if (ss_tot == 0.0) {
        fit.r_squared = ss_res <= 1e-24 ? 1.0 : 0.0;
    } else {
        fit.r_squared = std::clamp(1.0 - ss_res / ss_tot, 0.0, 1.0);
    }
    return fit;
}

double PolyFit::evaluate(double t) const {
    const double z = (t - center) / scale;
    double acc = 0.0;
    for (std::size_t k = scaled_coeffs.size(); k-- > 0;) acc = acc * z + scaled_coeffs[k];
    return acc;
}

PolyFit poly_fit(std::span<const double> ts, std::span<const double> cs, int order) {
    if (ts.size() != cs.size()) fail(ErrorKind::DimensionMismatch, "abscissa and ordinate lengths differ");
    if (order < 1) fail(ErrorKind::InvalidArgument, "polynomial order must be at least 1");
    const std::size_t m = static_cast<std::size_t>(order) + 1;
    if (ts.size() < m) {
        fail(ErrorKind::TooFewPoints, fmt::format("order-{} fit needs {} points, got {}", order, m, ts.size()));
    }
    const auto [lo, hi] = std::minmax_element(ts.begin(), ts.end());
    PolyFit fit;
    fit.order = order;
    fit.center = 0.5 * (*lo + *hi);
    fit.scale = 0.5 * (*hi - *lo);
    if (fit.scale == 0.0) fail(ErrorKind::SingularSystem, "all abscissae are equal");

    Matrix normal(m, m);
    std::vector<double> rhs(m, 0.0);
    std::vector<double> basis(m);
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const double z = (ts[i] - fit.center) / fit.scale;
        basis[0] = 1.0;
        for (std::size_t k = 1; k < m; ++k) basis[k] = basis[k - 1] * z;
        for (std::size_t r = 0; r < m; ++r) {
            rhs[r] += basis[r] * cs[i];
            for (std::size_t c = 0; c < m; ++c) normal(r, c) += basis[r] * basis[c];
        }
    }
    fit.scaled_coeffs = solve_dense(std::move(normal), std::move(rhs));

    // Expand sum_k beta_k ((t - center) / scale)^k into powers of t.
    fit.coeffs.assign(m, 0.0);
    for (int k = 0; k <= order; ++k) {
        const double beta = fit.scaled_coeffs[static_cast<std::size_t>(k)] / std::pow(fit.scale, k);
        for (int j = 0; j <= k; ++j) {
            fit.coeffs[static_cast<std::size_t>(j)] += beta * binomial(k, j) * std::pow(-fit.center, k - j);
        }
    }
    return fit;
}

// --- PLS1 -------------------------------------------------------------------------

double Pls1Model::predict(std::span<const double> x) const {
    if (x.size() != weights.size()) fail(ErrorKind::DimensionMismatch, "PLS input has the wrong length");
    double score = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) score += (x[j] - x_mean[j]) * weights[j];
    return y_mean + q * score;
}

std::vector<double> Pls1Model::invert(double y) const {
    const double score = (y - y_mean) / q;
    std::vector<double> x(x_mean.size());
    for (std::size_t j = 0; j < x.size(); ++j) x[j] = x_mean[j] + score * loadings[j];
    return x;
}

Pls1Model pls1_fit(const Matrix& x, std::span<const double> y) {
    const std::size_t n = x.rows();
    const std::size_t p = x.cols();
    if (y.size() != n) fail(ErrorKind::DimensionMismatch, "PLS response length differs from row count");
    if (n < 2) fail(ErrorKind::TooFewPoints, fmt::format("PLS needs at least 2 observations, got {}", n));

    Pls1Model model;
    model.x_mean.assign(p, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < p; ++j) model.x_mean[j] += x(i, j);
        model.y_mean += y[i];
    }
    for (double& m : model.x_mean) m /= static_cast<double>(n);
    model.y_mean /= static_cast<double>(n);

    std::vector<double> yc(n);
    double y_scale = 0.0, yc_norm2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        yc[i] = y[i] - model.y_mean;
        y_scale = std::max(y_scale, std::fabs(y[i]));
        yc_norm2 += yc[i] * yc[i];
    }
    Matrix xc(n, p);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < p; ++j) xc(i, j) = x(i, j) - model.x_mean[j];
    }

    std::vector<double> g(p, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < p; ++j) g[j] += xc(i, j) * yc[i];
    }
    double g_norm = 0.0;
    for (double v : g) g_norm += v * v;
    g_norm = std::sqrt(g_norm);
    if (g_norm < 1e-14 || std::sqrt(yc_norm2) <= 1e-14 * std::max(1.0, y_scale)) {
        fail(ErrorKind::DegenerateDirection, "X^T y vanishes after centering");
    }
    model.weights.resize(p);
    for (std::size_t j = 0; j < p; ++j) model.weights[j] = g[j] / g_norm;

    std::vector<double> s(n, 0.0);
    double ss = 0.0, sy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < p; ++j) s[i] += xc(i, j) * model.weights[j];
        ss += s[i] * s[i];
        sy += s[i] * yc[i];
    }
    model.q = sy / ss;
    model.loadings.assign(p, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < p; ++j) model.loadings[j] += xc(i, j) * s[i];
    }
    for (double& l : model.loadings) l /= ss;
    return model;
}

}  // namespace trajex
