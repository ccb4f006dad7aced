// SPDX-License-Identifier: Apache-2.0
//
// Analysis reports: per-tensor linearity of the rank-1 coefficient, explained
// variance of the leading components, coefficient dumps for plotting, and
// weight-space alignment of predicted against actual checkpoints.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "trajex/checkpoint_store.hpp"
#include "trajex/spectral.hpp"
#include "trajex/trajectory.hpp"

namespace trajex {

struct TensorDiagnostics {
    std::string tensor_name;
    double r_squared = 0.0;
    double slope = 0.0;
    double intercept = 0.0;
    std::vector<std::int64_t> steps;
    std::vector<double> sigma_top_k;
    std::vector<double> explained_variance;
    std::vector<std::vector<double>> coefficient_series;  ///< one series per component
};

struct LinearityReport {
    std::int64_t t_cut = 0;
    double threshold = 0.98;
    std::vector<TensorDiagnostics> records;  ///< sorted by tensor name
    std::vector<std::string> skipped;        ///< zero-delta tensors
    double fraction_above = 0.0;             ///< share of records with r_squared > threshold
};

/// sigma_k^2 / sum_j sigma_j^2 over the retained components.
std::vector<double> explained_variance(const SpectralDecomposition& decomposition);

/// One record per tensor with a non-zero trajectory over observed steps <= t_cut.
/// `rank` is clamped to the window length.
LinearityReport linearity_report(const CheckpointSeries& series, std::int64_t t_cut, std::size_t rank = 5,
                                 double threshold = 0.98, std::size_t workers = 1);

struct TensorAlignment {
    std::string tensor_name;
    std::optional<double> cosine;      ///< undefined when either delta has zero norm
    std::optional<double> norm_ratio;  ///< undefined when the actual delta has zero norm
};

struct AlignmentRecord {
    std::int64_t step = 0;
    std::optional<double> mean_cosine;  ///< unweighted means over the defined per-tensor values
    std::optional<double> mean_norm_ratio;
    std::vector<TensorAlignment> per_tensor;  ///< sorted by tensor name
};

/// Cosine and norm ratio of (predicted - base) against (actual - base), base
/// being checkpoint `base_step` of the actual series (its base by default).
std::vector<AlignmentRecord> alignment_report(const CheckpointSeries& predicted, const CheckpointSeries& actual,
                                              const std::vector<std::int64_t>& steps, std::size_t workers = 1,
                                              std::optional<std::int64_t> base_step = std::nullopt);

struct CoefficientRow {
    std::int64_t step = 0;
    std::size_t component = 0;  ///< 0-based
    double value = 0.0;
    double explained_variance = 0.0;
};

/// C_r row-major (step-major, then component), annotated with each
/// component's explained variance.
std::vector<CoefficientRow> coefficient_dump(const TrajectoryMatrix& traj, std::size_t rank);

/// Fixed-format float for reports: 17 significant digits.
std::string format_double(double value);

void write_linearity_csv(const LinearityReport& report, const std::filesystem::path& path);
void write_explained_variance_csv(const LinearityReport& report, const std::filesystem::path& path);
void write_coefficients_csv(const LinearityReport& report, const std::filesystem::path& path);
void write_alignment_csv(const std::vector<AlignmentRecord>& records, const std::filesystem::path& path);
void write_alignment_summary_csv(const std::vector<AlignmentRecord>& records, const std::filesystem::path& path);

}  // namespace trajex
