// SPDX-License-Identifier: Apache-2.0
//
// Planted checkpoint series with known ground truth, and a one-sided Jacobi
// SVD used as an independent reference for the Gram-matrix path.
//
// Every planted tensor follows
//
//   theta_t = theta_0 + (a t + b + eps_t) v + noise_t
//
// with v a seeded unit direction. eps_t ~ N(0, (coef_noise |a| std(t))^2) is
// coefficient noise, so the expected R^2 of a line through the rank-1
// coefficients is 1 / (1 + coef_noise^2). noise_t depends on noise_kind:
//
//   none              no extra term
//   full_iid          i.i.d. Gaussian elements, std noise_scale ||S|| / sqrt(T d)
//   orthogonal_iid    as full_iid with the component along v removed per step
//   extra_components  K random-walk coefficient series on directions
//                     orthonormal to v and to each other, scaled so their
//                     total energy is noise_scale^2 ||S||^2
//
// where S is the rank-1 part. Random draws come from SplitMix64 streams keyed
// per (tensor, step, 4096-element block), so any slab can be regenerated
// without touching the rest of the tensor.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trajex/dtype.hpp"
#include "trajex/spectral.hpp"

namespace trajex {

enum class NoiseKind { None, OrthogonalIid, FullIid, ExtraComponents };

std::string_view noise_kind_name(NoiseKind kind);
NoiseKind parse_noise_kind(std::string_view name);

struct PlantTensor {
    std::string name;
    std::vector<std::int64_t> shape;
    double slope = 1.0;
    double intercept = 0.0;
    double coef_noise = 0.0;

    std::size_t element_count() const;
};

struct PlantConfig {
    std::vector<PlantTensor> tensors;
    std::vector<std::int64_t> t_values;
    std::int64_t base_step = 0;
    DType dtype = DType::F32;
    std::uint64_t direction_seed = 1;
    NoiseKind noise_kind = NoiseKind::None;
    double noise_scale = 0.0;
    std::size_t extra_components = 0;
    std::uint64_t rng_seed = 1;
    double base_scale = 0.0;  ///< std of the i.i.d. base checkpoint elements

    /// Throws BadConfig.
    void validate() const;
};

/// Missing optional keys take the defaults above; malformed input is BadConfig.
PlantConfig plant_config_from_json(const nlohmann::json& doc);
nlohmann::json plant_config_to_json(const PlantConfig& config);
PlantConfig load_plant_config(const std::filesystem::path& path);

struct TensorTruth {
    std::string name;
    std::vector<std::int64_t> shape;
    double slope = 0.0;
    double intercept = 0.0;
    double coef_noise = 0.0;
    std::vector<double> epsilon;       ///< realized coefficient noise per step
    std::vector<double> coefficients;  ///< a t + b + eps_t
    double signal_energy = 0.0;        ///< ||S||_F^2
    double noise_energy = 0.0;         ///< exact for extra_components, expected for the i.i.d. kinds
    double expected_r2 = 1.0;          ///< 1 / (1 + coef_noise^2)
    double realized_r2 = 1.0;          ///< squared correlation of (t, coefficients)
};

struct GroundTruth {
    std::vector<std::int64_t> t_values;
    std::int64_t base_step = 0;
    NoiseKind noise_kind = NoiseKind::None;
    double noise_scale = 0.0;
    std::vector<TensorTruth> tensors;  ///< config order

    double expected_fraction_above(double threshold) const;
    double realized_fraction_above(double threshold) const;
};

nlohmann::json ground_truth_to_json(const GroundTruth& truth, double threshold = 0.98);

/// Scalars of the plant without generating any tensor data beyond the small
/// per-tensor passes needed for noise normalisation.
GroundTruth plant_ground_truth(const PlantConfig& config);

/// Writes the series under `out` (series.json, base and observed steps) plus
/// ground_truth.json, streaming every tensor slab by slab.
GroundTruth plant_series(const PlantConfig& config, const std::filesystem::path& out, std::size_t workers = 1);

/// Full-precision planted data for one tensor, held in memory.
struct PlantedTensor {
    std::vector<double> base;
    std::vector<double> direction;                      ///< v
    std::vector<std::vector<double>> extra_directions;  ///< extra_components only
    std::vector<std::vector<double>> deltas;            ///< one row per t_value
    std::vector<std::vector<double>> clean_deltas;      ///< (a t + b) v, no noise of any kind
};

PlantedTensor plant_tensor(const PlantConfig& config, std::size_t tensor_index);

/// (a T + b) v evaluated at an arbitrary step.
std::vector<double> analytic_delta(const PlantConfig& config, std::size_t tensor_index, std::int64_t step);

struct FullSvd {
    std::vector<double> singular_values;  ///< descending, min(rows, cols) entries
    Matrix u;                             ///< rows x k
    Matrix v;                             ///< k x cols, unit rows for non-zero sigma
    int sweeps = 0;
};

/// One-sided Jacobi (Hestenes) on the rows of `m`; rows <= 64, cols <= 4096.
FullSvd jacobi_svd_oracle(const Matrix& m);

}  // namespace trajex
