// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint reconstruction and extrapolation from a delta trajectory:
//
//   * rank-r reconstruction of observed steps,
//   * rank-1 trajectory extrapolation (fit_rank1 + predict),
//   * the ablation variants (rank-r, polynomial coefficient fits, raw space),
//   * two-endpoint weight-space baselines and a per-checkpoint rank-1/PLS
//     baseline.
//
// Everything here works on dense float64 vectors; the CLI layer streams the
// same arithmetic chunk by chunk for tensors too large to hold twice.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "trajex/checkpoint_store.hpp"
#include "trajex/spectral.hpp"
#include "trajex/trajectory.hpp"

namespace trajex {

struct Rank1Model {
    std::string tensor_name;
    std::vector<double> v1;  ///< unit norm
    double sigma1 = 0.0;
    LinearFit fit;  ///< over (steps, coefficients), slope >= 0 after orientation
    std::vector<std::int64_t> steps;
    std::vector<double> coefficients;

    double coefficient_at(double step) const { return fit.evaluate(step); }
};

enum class FitKind { Linear, Polynomial };
enum class Space { Svd, Raw };

struct ExtrapolationConfig {
    std::int64_t t_cut = 0;
    std::vector<std::int64_t> target_steps;
    std::size_t rank = 1;
    FitKind fit = FitKind::Linear;
    int poly_order = 3;
    Space space = Space::Svd;

    /// Throws InvalidArgument / RankOutOfRange on violated invariants.
    void validate() const;
};

/// Rank-1 direction and linear coefficient model over the true step values.
Rank1Model fit_rank1(const TrajectoryMatrix& traj);
/// Builds the model from an existing decomposition of rank >= 1.
Rank1Model fit_rank1(const std::string& tensor_name, const SpectralDecomposition& decomposition);
/// As above, taking over the first right vector instead of copying it.
Rank1Model fit_rank1(const std::string& tensor_name, SpectralDecomposition&& decomposition);

/// base + (a T + b) v1.
std::vector<double> predict(const Rank1Model& model, std::span<const double> base, std::int64_t target_step);

/// base + sum_{k<r} C_r[step_index][k] v_k.
std::vector<double> reconstruct_rank_r(const TrajectoryMatrix& traj, std::span<const double> base, std::size_t rank,
                                       std::size_t step_index);
std::vector<double> reconstruct_rank_r(const SpectralDecomposition& decomposition, std::span<const double> base,
                                       std::size_t step_index);

/// Weights w_t with sum_t w_t y_t equal to the least-squares fit of (steps, y)
/// evaluated at `target_step`, for any y.
std::vector<double> evaluation_weights(std::span<const std::int64_t> steps, FitKind fit, int poly_order,
                                       std::int64_t target_step);

/// Per-element least-squares line over every observed step, evaluated at T.
std::vector<double> extrapolate_raw(const TrajectoryMatrix& traj, std::span<const double> base,
                                    std::int64_t target_step);

/// Ablation-aware prediction: rank-r SVD space or raw space, linear or
/// polynomial coefficient fit. Rank 1 + linear + SVD equals predict(fit_rank1()).
std::vector<double> extrapolate(const TrajectoryMatrix& traj, std::span<const double> base,
                                const ExtrapolationConfig& config, std::int64_t target_step);

/// Predicted coefficient of each retained component at `target_step`.
std::vector<double> extrapolate_coefficients(const SpectralDecomposition& decomposition,
                                             const ExtrapolationConfig& config, std::int64_t target_step);

/// theta_cut + alpha (theta_cut - theta_0).
std::vector<double> expo(std::span<const double> base, std::span<const double> theta_cut, double alpha);

/// theta_t0 + (T - t0) / (t_cut - t0) (theta_cut - theta_t0).
std::vector<double> weight_extrapolate(std::span<const double> theta_t0, std::span<const double> theta_cut,
                                       std::int64_t t0, std::int64_t t_cut, std::int64_t target_step);

struct SingularTriple {
    double sigma = 0.0;
    std::vector<double> u;
    std::vector<double> v;
    int iterations = 0;
};

/// Top singular triple of a rows x cols row-major matrix by power iteration on
/// D^T D. Converged when sigma changes by at most 1e-10 relative; otherwise
/// PowerIterationStall after 1000 iterations.
SingularTriple top_singular_triple(std::span<const double> matrix, std::size_t rows, std::size_t cols);

/// Per-checkpoint rank-1 baseline: top singular triple of every observed delta
/// matrix (steps <= t_cut), right vectors sign-aligned to the last one,
/// PLS1 of x_t = sigma_t u_t on y_t = t / t_cut, inverted at y = T / t_cut and
/// assembled as theta_0 + x_hat v_last^T. 1-D tensors are treated as 1 x n.
std::vector<double> alpharl_extrapolate(const CheckpointSeries& series, const std::string& name, std::int64_t t_cut,
                                        std::int64_t target_step);
inline std::vector<double> alpharl_extrapolate(const CheckpointSeries& series, const std::string& name,
                                               std::int64_t t_cut) {
    return alpharl_extrapolate(series, name, t_cut, t_cut);
}

// Fitted-model persistence: <dir>/<tensor>.r1m holds, as little-endian
// float64, [n, steps[n], coefficients[n], a, b, r2, sigma1, d, v1[d]];
// <dir>/<tensor>.json carries the scalars.
void save_model(const Rank1Model& model, const std::filesystem::path& dir);
Rank1Model load_model(const std::filesystem::path& dir, const std::string& tensor_name);

}  // namespace trajex
