// SPDX-License-Identifier: Apache-2.0

#include "trajex/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include <fmt/core.h>

#include "trajex/checkpoint_store.hpp"
#include "trajex/error.hpp"
#include "trajex/parallel.hpp"
#include "trajex/rng.hpp"
#include "trajex/trajectory.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace trajex {

namespace {

constexpr std::uint64_t kDirectionTag = 0x44;
constexpr std::uint64_t kCoefTag = 0x43;
constexpr std::uint64_t kWalkTag = 0x57;
constexpr std::uint64_t kNoiseTag = 0x4E;
constexpr std::uint64_t kBaseTag = 0x42;

constexpr std::size_t kSlabElements = 16 * kBlockElements;

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t tensor, std::uint64_t sub,
                          std::uint64_t block) {
    return derive_seed(derive_seed(seed, tag, tensor), sub, block);
}

void fill_normals(std::uint64_t seed, std::span<double> out) {
    SplitMix64 rng(seed);
    for (auto& x : out) x = rng.normal();
}

double population_std(const std::vector<double>& xs) {
    const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(xs.size()));
}

double squared_correlation(const std::vector<double>& xs, const std::vector<double>& ys) {
    const double n = static_cast<double>(xs.size());
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    if (syy == 0.0 || sxx == 0.0) return 1.0;
    return std::clamp(sxy * sxy / (sxx * syy), 0.0, 1.0);
}

/// Everything needed to regenerate any slab of one planted tensor.
class Planter {
public:
    Planter(const PlantConfig& config, std::size_t index) : config_(config), index_(index) {
        const PlantTensor& spec = config.tensors[index];
        d_ = spec.element_count();
        for (auto t : config.t_values) ts_.push_back(static_cast<double>(t));
        const std::size_t T = ts_.size();

        truth_.name = spec.name;
        truth_.shape = spec.shape;
        truth_.slope = spec.slope;
        truth_.intercept = spec.intercept;
        truth_.coef_noise = spec.coef_noise;
        truth_.epsilon.assign(T, 0.0);
        const double eps_std = spec.coef_noise * std::abs(spec.slope) * population_std(ts_);
        if (eps_std > 0.0) {
            SplitMix64 rng(derive_seed(config.rng_seed, kCoefTag, index));
            for (auto& e : truth_.epsilon) e = eps_std * rng.normal();
        }
        for (std::size_t t = 0; t < T; ++t) {
            truth_.coefficients.push_back(spec.slope * ts_[t] + spec.intercept + truth_.epsilon[t]);
            truth_.signal_energy += truth_.coefficients.back() * truth_.coefficients.back();
        }
        truth_.expected_r2 = 1.0 / (1.0 + spec.coef_noise * spec.coef_noise);
        truth_.realized_r2 = squared_correlation(ts_, truth_.coefficients);

        k_ = config.noise_kind == NoiseKind::ExtraComponents ? config.extra_components : 0;
        orthonormalize();

        if (k_ > 0) {
            walks_.assign(k_, std::vector<double>(T, 0.0));
            SplitMix64 rng(derive_seed(config.rng_seed, kWalkTag, index));
            double energy = 0.0;
            for (auto& walk : walks_) {
                double level = 0.0;
                for (auto& w : walk) {
                    level += rng.normal();
                    w = level;
                    energy += w * w;
                }
            }
            const double scale = energy > 0.0 ? config.noise_scale * std::sqrt(truth_.signal_energy / energy) : 0.0;
            truth_.noise_energy = 0.0;
            for (auto& walk : walks_) {
                for (auto& w : walk) {
                    w *= scale;
                    truth_.noise_energy += w * w;
                }
            }
        }

        if (config.noise_kind == NoiseKind::FullIid || config.noise_kind == NoiseKind::OrthogonalIid) {
            noise_sigma_ = config.noise_scale * std::sqrt(truth_.signal_energy / static_cast<double>(T * d_));
            const double dof = config.noise_kind == NoiseKind::OrthogonalIid ? static_cast<double>(d_ - 1)
                                                                              : static_cast<double>(d_);
            truth_.noise_energy = noise_sigma_ * noise_sigma_ * static_cast<double>(T) * dof;
        }
        if (config.noise_kind == NoiseKind::OrthogonalIid && noise_sigma_ > 0.0) project_noise();
    }

    const TensorTruth& truth() const { return truth_; }
    std::size_t dim() const { return d_; }
    std::size_t steps() const { return ts_.size(); }

    /// Orthonormal directions over [offset, offset + len): row 0 is v, rows
    /// 1..K the extra directions. `offset` must be block aligned.
    void directions(std::size_t offset, std::size_t len, std::vector<std::vector<double>>& out) const {
        out.assign(k_ + 1, std::vector<double>(len, 0.0));
        std::vector<double> g(kBlockElements);
        for (std::size_t start = 0; start < len; start += kBlockElements) {
            const std::size_t n = std::min(kBlockElements, len - start);
            const std::size_t block = (offset + start) / kBlockElements;
            for (std::size_t i = 0; i <= k_; ++i) {
                raw_direction(i, block, std::span<double>(g.data(), n));
                for (std::size_t j = i; j <= k_; ++j) {
                    const double c = inverse_(j, i);
                    if (c == 0.0) continue;
                    for (std::size_t e = 0; e < n; ++e) out[j][start + e] += c * g[e];
                }
            }
        }
    }

    void base(std::size_t offset, std::span<double> out) const {
        if (config_.base_scale == 0.0) {
            std::fill(out.begin(), out.end(), 0.0);
            return;
        }
        for (std::size_t start = 0; start < out.size(); start += kBlockElements) {
            const std::size_t n = std::min(kBlockElements, out.size() - start);
            const std::size_t block = (offset + start) / kBlockElements;
            fill_normals(stream_seed(config_.rng_seed, kBaseTag, index_, 0, block), out.subspan(start, n));
            for (std::size_t e = start; e < start + n; ++e) out[e] *= config_.base_scale;
        }
    }

    /// Delta of step index t over the slab, given the slab's directions.
    void delta(std::size_t t, std::size_t offset, const std::vector<std::vector<double>>& dirs,
               std::span<double> out) const {
        const double c = truth_.coefficients[t];
        for (std::size_t e = 0; e < out.size(); ++e) out[e] = c * dirs[0][e];
        for (std::size_t j = 0; j < k_; ++j) {
            const double w = walks_[j][t];
            for (std::size_t e = 0; e < out.size(); ++e) out[e] += w * dirs[j + 1][e];
        }
        if (noise_sigma_ > 0.0) {
            std::vector<double> n(kBlockElements);
            const double p = projections_.empty() ? 0.0 : projections_[t];
            for (std::size_t start = 0; start < out.size(); start += kBlockElements) {
                const std::size_t len = std::min(kBlockElements, out.size() - start);
                noise_block(t, (offset + start) / kBlockElements, std::span<double>(n.data(), len));
                for (std::size_t e = 0; e < len; ++e) out[start + e] += n[e] - p * dirs[0][start + e];
            }
        }
    }

private:
    void raw_direction(std::size_t i, std::size_t block, std::span<double> out) const {
        fill_normals(stream_seed(config_.direction_seed, kDirectionTag, index_, i, block), out);
    }

    void noise_block(std::size_t t, std::size_t block, std::span<double> out) const {
        fill_normals(stream_seed(config_.rng_seed, kNoiseTag, index_, t, block), out);
        for (auto& x : out) x *= noise_sigma_;
    }

    // Gram of the raw Gaussian directions, then q = L^{-1} g with G = L L^T,
    // which makes q orthonormal and q_0 = g_0 / ||g_0||.
    void orthonormalize() {
        const std::size_t n = k_ + 1;
        if (d_ < n) {
            fail(ErrorKind::BadConfig, fmt::format("tensor '{}' has {} elements, too few for {} orthonormal directions",
                                                   truth_.name, d_, n));
        }
        std::vector<CompensatedSum> sums(n * n);
        std::vector<std::vector<double>> g(n, std::vector<double>(kBlockElements));
        const std::size_t blocks = (d_ + kBlockElements - 1) / kBlockElements;
        for (std::size_t b = 0; b < blocks; ++b) {
            const std::size_t len = std::min(kBlockElements, d_ - b * kBlockElements);
            for (std::size_t i = 0; i < n; ++i) raw_direction(i, b, std::span<double>(g[i].data(), len));
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j <= i; ++j) sums[i * n + j].add(block_dot(g[i].data(), g[j].data(), len));
            }
        }
        Matrix l(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j <= i; ++j) {
                double s = sums[i * n + j].value();
                for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
                if (i == j) {
                    if (s <= 0.0) fail(ErrorKind::BadConfig, fmt::format("tensor '{}': degenerate directions", truth_.name));
                    l(i, i) = std::sqrt(s);
                } else {
                    l(i, j) = s / l(j, j);
                }
            }
        }
        inverse_ = Matrix(n, n);
        for (std::size_t c = 0; c < n; ++c) {
            for (std::size_t i = c; i < n; ++i) {
                double s = i == c ? 1.0 : 0.0;
                for (std::size_t k = c; k < i; ++k) s -= l(i, k) * inverse_(k, c);
                inverse_(i, c) = s / l(i, i);
            }
        }
    }

    void project_noise() {
        const std::size_t T = ts_.size();
        std::vector<CompensatedSum> sums(T);
        std::vector<double> n(kBlockElements);
        std::vector<std::vector<double>> dirs;
        for (std::size_t offset = 0; offset < d_; offset += kSlabElements) {
            const std::size_t len = std::min(kSlabElements, d_ - offset);
            directions(offset, len, dirs);
            for (std::size_t start = 0; start < len; start += kBlockElements) {
                const std::size_t bl = std::min(kBlockElements, len - start);
                for (std::size_t t = 0; t < T; ++t) {
                    noise_block(t, (offset + start) / kBlockElements, std::span<double>(n.data(), bl));
                    sums[t].add(block_dot(n.data(), dirs[0].data() + start, bl));
                }
            }
        }
        projections_.resize(T);
        for (std::size_t t = 0; t < T; ++t) projections_[t] = sums[t].value();
    }

    const PlantConfig& config_;
    std::size_t index_;
    std::size_t d_ = 0;
    std::size_t k_ = 0;
    std::vector<double> ts_;
    TensorTruth truth_;
    Matrix inverse_;
    std::vector<std::vector<double>> walks_;
    double noise_sigma_ = 0.0;
    std::vector<double> projections_;
};

std::vector<TensorSpec> schema_of(const PlantConfig& config) {
    std::vector<TensorSpec> schema;
    for (const auto& t : config.tensors) schema.push_back({t.name, t.shape, config.dtype});
    return schema;
}

template <typename T>
T json_get(const json& doc, const char* key, T fallback) {
    if (!doc.contains(key)) return fallback;
    return doc.at(key).get<T>();
}

}  // namespace

std::string_view noise_kind_name(NoiseKind kind) {
    switch (kind) {
        case NoiseKind::None: return "none";
        case NoiseKind::OrthogonalIid: return "orthogonal_iid";
        case NoiseKind::FullIid: return "full_iid";
        case NoiseKind::ExtraComponents: return "extra_components";
    }
    return "none";
}

NoiseKind parse_noise_kind(std::string_view name) {
    for (auto kind : {NoiseKind::None, NoiseKind::OrthogonalIid, NoiseKind::FullIid, NoiseKind::ExtraComponents}) {
        if (noise_kind_name(kind) == name) return kind;
    }
    fail(ErrorKind::BadConfig, fmt::format("unknown noise_kind '{}'", name));
}

std::size_t PlantTensor::element_count() const {
    std::size_t n = 1;
    for (auto extent : shape) n *= static_cast<std::size_t>(std::max<std::int64_t>(extent, 0));
    return n;
}

void PlantConfig::validate() const {
    if (tensors.empty()) fail(ErrorKind::BadConfig, "plant config has no tensors");
    if (t_values.empty()) fail(ErrorKind::BadConfig, "plant config has no t_values");
    if (base_step < 0) fail(ErrorKind::BadConfig, "base_step must be non-negative");
    for (std::size_t i = 0; i < t_values.size(); ++i) {
        if (t_values[i] <= base_step) fail(ErrorKind::BadConfig, "t_values must exceed base_step");
        if (i > 0 && t_values[i] <= t_values[i - 1]) fail(ErrorKind::BadConfig, "t_values must be strictly increasing");
    }
    if (!(noise_scale >= 0.0) || !std::isfinite(noise_scale)) fail(ErrorKind::BadConfig, "noise_scale must be >= 0");
    if (!(base_scale >= 0.0) || !std::isfinite(base_scale)) fail(ErrorKind::BadConfig, "base_scale must be >= 0");
    if (noise_kind == NoiseKind::ExtraComponents && extra_components == 0) {
        fail(ErrorKind::BadConfig, "noise_kind extra_components needs extra_components >= 1");
    }
    std::set<std::string> names;
    for (const auto& t : tensors) {
        if (t.name.empty() || t.name.find('/') != std::string::npos || t.name.front() == '.') {
            fail(ErrorKind::BadConfig, fmt::format("invalid tensor name '{}'", t.name));
        }
        if (!names.insert(t.name).second) fail(ErrorKind::BadConfig, fmt::format("duplicate tensor '{}'", t.name));
        for (auto extent : t.shape) {
            if (extent <= 0) fail(ErrorKind::BadConfig, fmt::format("tensor '{}' has a non-positive extent", t.name));
        }
        if (!std::isfinite(t.slope) || !std::isfinite(t.intercept)) {
            fail(ErrorKind::BadConfig, fmt::format("tensor '{}' has a non-finite slope or intercept", t.name));
        }
        if (!(t.coef_noise >= 0.0)) fail(ErrorKind::BadConfig, fmt::format("tensor '{}': coef_noise must be >= 0", t.name));
    }
}

PlantConfig plant_config_from_json(const json& doc) {
    PlantConfig config;
    try {
        if (!doc.is_object()) fail(ErrorKind::BadConfig, "plant config must be a JSON object");
        config.t_values = doc.at("t_values").get<std::vector<std::int64_t>>();
        config.base_step = json_get<std::int64_t>(doc, "base_step", 0);
        config.dtype = parse_dtype(json_get<std::string>(doc, "dtype", "f32"));
        config.direction_seed = json_get<std::uint64_t>(doc, "direction_seed", 1);
        config.noise_kind = parse_noise_kind(json_get<std::string>(doc, "noise_kind", "none"));
        config.noise_scale = json_get<double>(doc, "noise_scale", 0.0);
        config.extra_components = json_get<std::size_t>(doc, "extra_components", 0);
        config.rng_seed = json_get<std::uint64_t>(doc, "rng_seed", 1);
        config.base_scale = json_get<double>(doc, "base_scale", 0.0);
        for (const auto& t : doc.at("tensors")) {
            PlantTensor tensor;
            tensor.name = t.at("name").get<std::string>();
            tensor.shape = t.at("shape").get<std::vector<std::int64_t>>();
            tensor.slope = json_get<double>(t, "slope", 1.0);
            tensor.intercept = json_get<double>(t, "intercept", 0.0);
            tensor.coef_noise = json_get<double>(t, "coef_noise", 0.0);
            config.tensors.push_back(std::move(tensor));
        }
    } catch (const json::exception& e) {
        fail(ErrorKind::BadConfig, fmt::format("malformed plant config: {}", e.what()));
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::BadConfig) throw;
        fail(ErrorKind::BadConfig, e.what());
    }
    config.validate();
    return config;
}

json plant_config_to_json(const PlantConfig& config) {
    json tensors = json::array();
    for (const auto& t : config.tensors) {
        tensors.push_back({{"name", t.name},
                           {"shape", t.shape},
                           {"slope", t.slope},
                           {"intercept", t.intercept},
                           {"coef_noise", t.coef_noise}});
    }
    return json{{"t_values", config.t_values},
                {"base_step", config.base_step},
                {"dtype", std::string(dtype_name(config.dtype))},
                {"direction_seed", config.direction_seed},
                {"noise_kind", std::string(noise_kind_name(config.noise_kind))},
                {"noise_scale", config.noise_scale},
                {"extra_components", config.extra_components},
                {"rng_seed", config.rng_seed},
                {"base_scale", config.base_scale},
                {"tensors", std::move(tensors)}};
}

PlantConfig load_plant_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::BadConfig, fmt::format("cannot open plant config '{}'", path.string()));
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorKind::BadConfig, fmt::format("malformed JSON in '{}': {}", path.string(), e.what()));
    }
    return plant_config_from_json(doc);
}

double GroundTruth::expected_fraction_above(double threshold) const {
    if (tensors.empty()) return 0.0;
    const auto n = std::count_if(tensors.begin(), tensors.end(), [&](const auto& t) { return t.expected_r2 > threshold; });
    return static_cast<double>(n) / static_cast<double>(tensors.size());
}

double GroundTruth::realized_fraction_above(double threshold) const {
    if (tensors.empty()) return 0.0;
    const auto n = std::count_if(tensors.begin(), tensors.end(), [&](const auto& t) { return t.realized_r2 > threshold; });
    return static_cast<double>(n) / static_cast<double>(tensors.size());
}

json ground_truth_to_json(const GroundTruth& truth, double threshold) {
    json tensors = json::array();
    for (const auto& t : truth.tensors) {
        tensors.push_back({{"name", t.name},
                           {"shape", t.shape},
                           {"slope", t.slope},
                           {"intercept", t.intercept},
                           {"coef_noise", t.coef_noise},
                           {"epsilon", t.epsilon},
                           {"coefficients", t.coefficients},
                           {"signal_energy", t.signal_energy},
                           {"noise_energy", t.noise_energy},
                           {"expected_r2", t.expected_r2},
                           {"realized_r2", t.realized_r2}});
    }
    return json{{"t_values", truth.t_values},
                {"base_step", truth.base_step},
                {"noise_kind", std::string(noise_kind_name(truth.noise_kind))},
                {"noise_scale", truth.noise_scale},
                {"r2_threshold", threshold},
                {"expected_fraction_above", truth.expected_fraction_above(threshold)},
                {"realized_fraction_above", truth.realized_fraction_above(threshold)},
                {"tensors", std::move(tensors)}};
}

GroundTruth plant_ground_truth(const PlantConfig& config) {
    config.validate();
    GroundTruth truth;
    truth.t_values = config.t_values;
    truth.base_step = config.base_step;
    truth.noise_kind = config.noise_kind;
    truth.noise_scale = config.noise_scale;
    for (std::size_t i = 0; i < config.tensors.size(); ++i) truth.tensors.push_back(Planter(config, i).truth());
    return truth;
}

GroundTruth plant_series(const PlantConfig& config, const fs::path& out, std::size_t workers) {
    config.validate();
    const std::vector<TensorSpec> schema = schema_of(config);
    write_series_index(out, config.base_step, config.t_values, schema);

    CheckpointWriter base_writer(out, config.base_step, schema);
    std::vector<std::unique_ptr<CheckpointWriter>> step_writers;
    for (auto t : config.t_values) step_writers.push_back(std::make_unique<CheckpointWriter>(out, t, schema));

    GroundTruth truth;
    truth.t_values = config.t_values;
    truth.base_step = config.base_step;
    truth.noise_kind = config.noise_kind;
    truth.noise_scale = config.noise_scale;
    truth.tensors.resize(config.tensors.size());

    parallel_for(config.tensors.size(), workers, [&](std::size_t i) {
        const Planter planter(config, i);
        const std::string& name = config.tensors[i].name;
        const std::size_t d = planter.dim();
        const std::size_t T = planter.steps();

        BlobWriter base_blob = base_writer.open_tensor(name);
        std::vector<BlobWriter> blobs;
        blobs.reserve(T);
        for (std::size_t t = 0; t < T; ++t) blobs.push_back(step_writers[t]->open_tensor(name));

        std::vector<std::vector<double>> dirs;
        std::vector<double> base(kSlabElements), row(kSlabElements);
        for (std::size_t offset = 0; offset < d; offset += kSlabElements) {
            const std::size_t len = std::min(kSlabElements, d - offset);
            std::span<double> base_span(base.data(), len), row_span(row.data(), len);
            planter.directions(offset, len, dirs);
            planter.base(offset, base_span);
            base_blob.append(base_span);
            for (std::size_t t = 0; t < T; ++t) {
                planter.delta(t, offset, dirs, row_span);
                for (std::size_t e = 0; e < len; ++e) row_span[e] += base_span[e];
                blobs[t].append(row_span);
            }
        }
        base_writer.commit(name, base_blob.finish());
        for (std::size_t t = 0; t < T; ++t) step_writers[t]->commit(name, blobs[t].finish());
        truth.tensors[i] = planter.truth();
    });

    base_writer.finish();
    for (auto& w : step_writers) w->finish();

    std::ofstream gt(out / "ground_truth.json", std::ios::trunc);
    if (!gt) fail(ErrorKind::IoFailure, fmt::format("cannot write '{}'", (out / "ground_truth.json").string()));
    gt << ground_truth_to_json(truth).dump(2) << '\n';
    return truth;
}

PlantedTensor plant_tensor(const PlantConfig& config, std::size_t tensor_index) {
    config.validate();
    if (tensor_index >= config.tensors.size()) {
        fail(ErrorKind::UnknownTensor, fmt::format("tensor index {} out of range", tensor_index));
    }
    const Planter planter(config, tensor_index);
    const std::size_t d = planter.dim();
    PlantedTensor out;
    std::vector<std::vector<double>> dirs;
    planter.directions(0, d, dirs);
    out.base.resize(d);
    planter.base(0, out.base);
    out.direction = dirs[0];
    out.extra_directions.assign(dirs.begin() + 1, dirs.end());
    const PlantTensor& spec = config.tensors[tensor_index];
    for (std::size_t t = 0; t < planter.steps(); ++t) {
        std::vector<double> row(d);
        planter.delta(t, 0, dirs, row);
        out.deltas.push_back(std::move(row));
        const double c = spec.slope * static_cast<double>(config.t_values[t]) + spec.intercept;
        std::vector<double> clean(d);
        for (std::size_t e = 0; e < d; ++e) clean[e] = c * dirs[0][e];
        out.clean_deltas.push_back(std::move(clean));
    }
    return out;
}

std::vector<double> analytic_delta(const PlantConfig& config, std::size_t tensor_index, std::int64_t step) {
    const PlantedTensor planted = plant_tensor(config, tensor_index);
    const PlantTensor& spec = config.tensors[tensor_index];
    const double c = spec.slope * static_cast<double>(step) + spec.intercept;
    std::vector<double> out(planted.direction.size());
    for (std::size_t e = 0; e < out.size(); ++e) out[e] = c * planted.direction[e];
    return out;
}

FullSvd jacobi_svd_oracle(const Matrix& m) {
    const std::size_t rows = m.rows();
    const std::size_t cols = m.cols();
    if (rows == 0 || cols == 0) fail(ErrorKind::InvalidArgument, "oracle needs a non-empty matrix");
    if (rows > 64 || cols > 4096) {
        fail(ErrorKind::SizeExceeded, fmt::format("oracle limited to 64 x 4096, got {} x {}", rows, cols));
    }
    Matrix a = m;
    Matrix j = Matrix::identity(rows);
    auto dot = [&](std::size_t p, std::size_t q) {
        double s = 0.0;
        for (std::size_t e = 0; e < cols; ++e) s += a(p, e) * a(q, e);
        return s;
    };

    int sweeps = 0;
    constexpr int kMaxSweeps = 100;
    for (; sweeps < kMaxSweeps; ++sweeps) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < rows; ++p) {
            for (std::size_t q = p + 1; q < rows; ++q) {
                const double alpha = dot(p, p);
                const double beta = dot(q, q);
                const double gamma = dot(p, q);
                if (alpha == 0.0 || beta == 0.0) continue;
                if (std::abs(gamma) <= 1e-15 * std::sqrt(alpha * beta)) continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t e = 0; e < cols; ++e) {
                    const double x = a(p, e), y = a(q, e);
                    a(p, e) = c * x - s * y;
                    a(q, e) = s * x + c * y;
                }
                for (std::size_t e = 0; e < rows; ++e) {
                    const double x = j(e, p), y = j(e, q);
                    j(e, p) = c * x - s * y;
                    j(e, q) = s * x + c * y;
                }
            }
        }
        if (!rotated) break;
    }
    if (sweeps == kMaxSweeps) fail(ErrorKind::NoConvergence, "one-sided Jacobi did not converge");

    std::vector<double> norms(rows);
    for (std::size_t p = 0; p < rows; ++p) norms[p] = std::sqrt(dot(p, p));
    std::vector<std::size_t> order(rows);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto x, auto y) { return norms[x] > norms[y]; });

    const std::size_t k = std::min(rows, cols);
    FullSvd out;
    out.sweeps = sweeps;
    out.u = Matrix(rows, k);
    out.v = Matrix(k, cols);
    for (std::size_t c = 0; c < k; ++c) {
        const std::size_t p = order[c];
        out.singular_values.push_back(norms[p]);
        for (std::size_t e = 0; e < rows; ++e) out.u(e, c) = j(e, p);
        if (norms[p] > 0.0) {
            for (std::size_t e = 0; e < cols; ++e) out.v(c, e) = a(p, e) / norms[p];
        }
    }
    return out;
}

}  // namespace trajex
