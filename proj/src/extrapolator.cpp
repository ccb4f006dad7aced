// SPDX-License-Identifier: Apache-2.0

#include "trajex/extrapolator.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "trajex/error.hpp"
#include "trajex/rng.hpp"

namespace fs = std::filesystem;

namespace trajex {

namespace {

constexpr int kPowerMaxIterations = 1000;
constexpr double kPowerTolerance = 1e-10;

void require_same_length(std::size_t a, std::size_t b, const char* what) {
    if (a != b) fail(ErrorKind::DimensionMismatch, fmt::format("{}: lengths {} and {} differ", what, a, b));
}

std::vector<double> steps_as_double(std::span<const std::int64_t> steps) {
    return {steps.begin(), steps.end()};
}

double norm2(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

}  // namespace

void ExtrapolationConfig::validate() const {
    if (rank < 1) fail(ErrorKind::RankOutOfRange, "rank must be at least 1");
    if (fit == FitKind::Polynomial && poly_order < 1) fail(ErrorKind::InvalidArgument, "polynomial order must be >= 1");
    for (auto t : target_steps) {
        if (t <= 0) fail(ErrorKind::InvalidArgument, fmt::format("target step {} must be positive", t));
    }
}

Rank1Model fit_rank1(const std::string& tensor_name, const SpectralDecomposition& decomposition) {
    if (decomposition.rank < 1) fail(ErrorKind::RankOutOfRange, "decomposition has no components");
    if (decomposition.steps.size() < 2) {
        fail(ErrorKind::TooFewPoints,
             fmt::format("tensor '{}' needs at least 2 observed steps, got {}", tensor_name, decomposition.steps.size()));
    }
    Rank1Model model;
    model.tensor_name = tensor_name;
    const auto v = decomposition.right_vectors.row(0);
    model.v1.assign(v.begin(), v.end());
    model.sigma1 = decomposition.singular_values[0];
    model.steps = decomposition.steps;
    model.coefficients = decomposition.coefficient_series(0);
    model.fit = linear_fit(steps_as_double(model.steps), model.coefficients);
    return model;
}

Rank1Model fit_rank1(const std::string& tensor_name, SpectralDecomposition&& decomposition) {
    if (decomposition.rank != 1) return fit_rank1(tensor_name, static_cast<const SpectralDecomposition&>(decomposition));
    Rank1Model model;
    model.tensor_name = tensor_name;
    model.sigma1 = decomposition.singular_values[0];
    model.steps = decomposition.steps;
    model.coefficients = decomposition.coefficient_series(0);
    if (model.steps.size() < 2) {
        fail(ErrorKind::TooFewPoints,
             fmt::format("tensor '{}' needs at least 2 observed steps, got {}", tensor_name, model.steps.size()));
    }
    model.fit = linear_fit(steps_as_double(model.steps), model.coefficients);
    model.v1 = decomposition.right_vectors.release();
    return model;
}

Rank1Model fit_rank1(const TrajectoryMatrix& traj) {
    if (traj.rows() < 2) {
        fail(ErrorKind::TooFewPoints,
             fmt::format("tensor '{}' needs at least 2 observed steps, got {}", traj.tensor_name(), traj.rows()));
    }
    return fit_rank1(traj.tensor_name(), truncated_svd(traj, 1));
}

std::vector<double> predict(const Rank1Model& model, std::span<const double> base, std::int64_t target_step) {
    if (target_step <= 0) fail(ErrorKind::InvalidArgument, "target step must be positive");
    require_same_length(base.size(), model.v1.size(), "predict");
    const double c = model.coefficient_at(static_cast<double>(target_step));
    std::vector<double> out(base.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = base[i] + c * model.v1[i];
    return out;
}

std::vector<double> reconstruct_rank_r(const SpectralDecomposition& decomposition, std::span<const double> base,
                                       std::size_t step_index) {
    if (step_index >= decomposition.coefficients.rows()) {
        fail(ErrorKind::BadStepIndex,
             fmt::format("step index {} outside [0, {})", step_index, decomposition.coefficients.rows()));
    }
    require_same_length(base.size(), decomposition.right_vectors.cols(), "reconstruct_rank_r");
    std::vector<double> delta(base.size(), 0.0);
    for (std::size_t k = 0; k < decomposition.rank; ++k) {
        const double c = decomposition.coefficients(step_index, k);
        const auto v = decomposition.right_vectors.row(k);
        for (std::size_t i = 0; i < delta.size(); ++i) delta[i] += c * v[i];
    }
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] += base[i];
    return delta;
}

std::vector<double> reconstruct_rank_r(const TrajectoryMatrix& traj, std::span<const double> base, std::size_t rank,
                                       std::size_t step_index) {
    if (step_index >= traj.rows()) {
        fail(ErrorKind::BadStepIndex, fmt::format("step index {} outside [0, {})", step_index, traj.rows()));
    }
    return reconstruct_rank_r(truncated_svd(traj, rank), base, step_index);
}

std::vector<double> evaluation_weights(std::span<const std::int64_t> steps, FitKind fit, int poly_order,
                                       std::int64_t target_step) {
    const std::size_t n = steps.size();
    if (n < 2) fail(ErrorKind::TooFewPoints, fmt::format("need at least 2 observed steps, got {}", n));
    const std::vector<double> ts = steps_as_double(steps);
    const double target = static_cast<double>(target_step);
    std::vector<double> w(n);
    if (fit == FitKind::Linear) {
        double mean = 0.0;
        for (double t : ts) mean += t;
        mean /= static_cast<double>(n);
        double sxx = 0.0;
        for (double t : ts) sxx += (t - mean) * (t - mean);
        if (sxx == 0.0) fail(ErrorKind::DegenerateAbscissa, "all steps are equal");
        for (std::size_t i = 0; i < n; ++i) {
            w[i] = 1.0 / static_cast<double>(n) + (target - mean) * (ts[i] - mean) / sxx;
        }
        return w;
    }
    std::vector<double> unit(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        unit[i] = 1.0;
        w[i] = poly_fit(ts, unit, poly_order).evaluate(target);
        unit[i] = 0.0;
    }
    return w;
}

std::vector<double> extrapolate_raw(const TrajectoryMatrix& traj, std::span<const double> base,
                                    std::int64_t target_step) {
    ExtrapolationConfig config;
    config.space = Space::Raw;
    return extrapolate(traj, base, config, target_step);
}

std::vector<double> extrapolate_coefficients(const SpectralDecomposition& decomposition,
                                             const ExtrapolationConfig& config, std::int64_t target_step) {
    const std::vector<double> ts = steps_as_double(decomposition.steps);
    std::vector<double> out(decomposition.rank);
    for (std::size_t k = 0; k < decomposition.rank; ++k) {
        const std::vector<double> cs = decomposition.coefficient_series(k);
        if (config.fit == FitKind::Linear) {
            out[k] = linear_fit(ts, cs).evaluate(static_cast<double>(target_step));
        } else {
            out[k] = poly_fit(ts, cs, config.poly_order).evaluate(static_cast<double>(target_step));
        }
    }
    return out;
}

std::vector<double> extrapolate(const TrajectoryMatrix& traj, std::span<const double> base,
                                const ExtrapolationConfig& config, std::int64_t target_step) {
    config.validate();
    if (target_step <= 0) fail(ErrorKind::InvalidArgument, "target step must be positive");
    require_same_length(base.size(), traj.dim(), "extrapolate");
    if (traj.rows() < 2) {
        fail(ErrorKind::TooFewPoints,
             fmt::format("tensor '{}' needs at least 2 observed steps, got {}", traj.tensor_name(), traj.rows()));
    }

    if (config.space == Space::Raw) {
        const std::vector<double> w = evaluation_weights(traj.steps(), config.fit, config.poly_order, target_step);
        std::vector<double> out(base.begin(), base.end());
        traj.for_each_chunk([&](const RowChunk& c) {
            double* dst = out.data() + c.offset;
            std::vector<double> delta(c.length, 0.0);
            for (std::size_t t = 0; t < c.rows; ++t) {
                const auto r = c.row(t);
                for (std::size_t i = 0; i < c.length; ++i) delta[i] += w[t] * r[i];
            }
            for (std::size_t i = 0; i < c.length; ++i) dst[i] += delta[i];
        });
        return out;
    }

    if (config.rank == 1 && config.fit == FitKind::Linear) return predict(fit_rank1(traj), base, target_step);

    const SpectralDecomposition dec = truncated_svd(traj, config.rank);
    const std::vector<double> coeffs = extrapolate_coefficients(dec, config, target_step);
    std::vector<double> delta(base.size());
    const auto v0 = dec.right_vectors.row(0);
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = coeffs[0] * v0[i];
    for (std::size_t k = 1; k < dec.rank; ++k) {
        const auto v = dec.right_vectors.row(k);
        for (std::size_t i = 0; i < delta.size(); ++i) delta[i] += coeffs[k] * v[i];
    }
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = base[i] + delta[i];
    return delta;
}

std::vector<double> expo(std::span<const double> base, std::span<const double> theta_cut, double alpha) {
    require_same_length(base.size(), theta_cut.size(), "expo");
    std::vector<double> out(base.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = theta_cut[i] + alpha * (theta_cut[i] - base[i]);
    return out;
}

std::vector<double> weight_extrapolate(std::span<const double> theta_t0, std::span<const double> theta_cut,
                                       std::int64_t t0, std::int64_t t_cut, std::int64_t target_step) {
    require_same_length(theta_t0.size(), theta_cut.size(), "weight_extrapolate");
    if (t_cut == t0) fail(ErrorKind::DegenerateInterval, fmt::format("t0 and t_cut are both {}", t0));
    if (t_cut < t0) fail(ErrorKind::InvalidArgument, fmt::format("t_cut {} precedes t0 {}", t_cut, t0));
    const double ratio = static_cast<double>(target_step - t0) / static_cast<double>(t_cut - t0);
    std::vector<double> out(theta_t0.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = theta_t0[i] + ratio * (theta_cut[i] - theta_t0[i]);
    return out;
}

SingularTriple top_singular_triple(std::span<const double> matrix, std::size_t rows, std::size_t cols) {
    require_same_length(matrix.size(), rows * cols, "top_singular_triple");
    SingularTriple out;
    out.v.resize(cols);
    SplitMix64 rng(0x5EEDu);
    for (double& x : out.v) x = 1.0 + 0.1 * rng.normal();
    {
        const double n = norm2(out.v);
        for (double& x : out.v) x /= n;
    }
    out.u.assign(rows, 0.0);
    auto apply = [&](std::span<const double> v, std::vector<double>& u) {
        for (std::size_t i = 0; i < rows; ++i) {
            double s = 0.0;
            const double* r = matrix.data() + i * cols;
            for (std::size_t j = 0; j < cols; ++j) s += r[j] * v[j];
            u[i] = s;
        }
    };
    std::vector<double> next(cols);
    double sigma = 0.0;
    for (int it = 1; it <= kPowerMaxIterations; ++it) {
        apply(out.v, out.u);
        const double s = norm2(out.u);
        out.iterations = it;
        if (s == 0.0) {
            out.sigma = 0.0;
            std::fill(out.u.begin(), out.u.end(), 0.0);
            return out;
        }
        std::fill(next.begin(), next.end(), 0.0);
        for (std::size_t i = 0; i < rows; ++i) {
            const double* r = matrix.data() + i * cols;
            for (std::size_t j = 0; j < cols; ++j) next[j] += r[j] * out.u[i];
        }
        const double n = norm2(next);
        for (std::size_t j = 0; j < cols; ++j) out.v[j] = next[j] / n;
        if (it > 1 && std::fabs(s - sigma) <= kPowerTolerance * s) {
            apply(out.v, out.u);
            out.sigma = norm2(out.u);
            for (double& x : out.u) x /= out.sigma;
            return out;
        }
        sigma = s;
    }
    fail(ErrorKind::PowerIterationStall,
         fmt::format("top singular value did not settle to 1e-10 within {} iterations", kPowerMaxIterations));
}

std::vector<double> alpharl_extrapolate(const CheckpointSeries& series, const std::string& name, std::int64_t t_cut,
                                        std::int64_t target_step) {
    const TensorSpec& spec = series.tensor(name);
    std::size_t rows = 0, cols = 0;
    if (spec.shape.size() == 2) {
        rows = static_cast<std::size_t>(spec.shape[0]);
        cols = static_cast<std::size_t>(spec.shape[1]);
    } else if (spec.shape.size() == 1) {
        rows = 1;
        cols = static_cast<std::size_t>(spec.shape[0]);
    } else {
        fail(ErrorKind::NotAMatrix, fmt::format("tensor '{}' has {} dimensions", name, spec.shape.size()));
    }
    if (t_cut <= 0) fail(ErrorKind::InvalidArgument, "t_cut must be positive");

    std::vector<std::int64_t> steps;
    for (auto step : series.observed_steps()) {
        if (step <= t_cut) steps.push_back(step);
    }
    if (steps.size() < 2) {
        fail(ErrorKind::TooFewPoints,
             fmt::format("tensor '{}' needs at least 2 observed steps <= {}, got {}", name, t_cut, steps.size()));
    }

    const std::vector<double> base = series.read_tensor(series.base().step, name);
    std::vector<SingularTriple> triples;
    triples.reserve(steps.size());
    for (auto step : steps) {
        std::vector<double> delta = series.read_tensor(step, name);
        for (std::size_t i = 0; i < delta.size(); ++i) delta[i] -= base[i];
        triples.push_back(top_singular_triple(delta, rows, cols));
    }

    const std::vector<double>& v_ref = triples.back().v;
    Matrix features(steps.size(), rows);
    std::vector<double> progress(steps.size());
    for (std::size_t t = 0; t < steps.size(); ++t) {
        SingularTriple& tri = triples[t];
        double dot = 0.0;
        for (std::size_t j = 0; j < cols; ++j) dot += tri.v[j] * v_ref[j];
        const double sign = dot < 0.0 ? -1.0 : 1.0;
        for (std::size_t i = 0; i < rows; ++i) features(t, i) = sign * tri.sigma * tri.u[i];
        progress[t] = static_cast<double>(steps[t]) / static_cast<double>(t_cut);
    }
    const Pls1Model pls = pls1_fit(features, progress);
    const std::vector<double> left = pls.invert(static_cast<double>(target_step) / static_cast<double>(t_cut));

    std::vector<double> out(base);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] += left[i] * v_ref[j];
    }
    return out;
}

// --- persistence ------------------------------------------------------------------

void save_model(const Rank1Model& model, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) fail(ErrorKind::IoFailure, fmt::format("cannot create '{}': {}", dir.string(), ec.message()));

    std::vector<double> payload;
    const std::size_t n = model.steps.size();
    payload.reserve(2 * n + 6 + model.v1.size());
    payload.push_back(static_cast<double>(n));
    for (auto s : model.steps) payload.push_back(static_cast<double>(s));
    payload.insert(payload.end(), model.coefficients.begin(), model.coefficients.end());
    payload.push_back(model.fit.a);
    payload.push_back(model.fit.b);
    payload.push_back(model.fit.r_squared);
    payload.push_back(model.sigma1);
    payload.push_back(static_cast<double>(model.v1.size()));

    const fs::path bin = dir / (model.tensor_name + ".r1m");
    std::ofstream out(bin, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::IoFailure, fmt::format("cannot write '{}'", bin.string()));
    out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size() * 8));
    out.write(reinterpret_cast<const char*>(model.v1.data()), static_cast<std::streamsize>(model.v1.size() * 8));
    if (!out) fail(ErrorKind::IoFailure, fmt::format("write failed for '{}'", bin.string()));

    const nlohmann::json sidecar{{"tensor", model.tensor_name}, {"n_steps", n},
                                 {"dim", model.v1.size()},        {"a", model.fit.a},
                                 {"b", model.fit.b},              {"r_squared", model.fit.r_squared},
                                 {"sigma1", model.sigma1},        {"steps", model.steps}};
    std::ofstream side(dir / (model.tensor_name + ".json"), std::ios::trunc);
    side << sidecar.dump(2) << '\n';
    if (!side) fail(ErrorKind::IoFailure, fmt::format("cannot write sidecar for '{}'", model.tensor_name));
}

Rank1Model load_model(const fs::path& dir, const std::string& tensor_name) {
    const fs::path bin = dir / (tensor_name + ".r1m");
    std::ifstream in(bin, std::ios::binary);
    if (!in) fail(ErrorKind::IoFailure, fmt::format("cannot open '{}'", bin.string()));
    auto next = [&]() {
        double x;
        in.read(reinterpret_cast<char*>(&x), 8);
        if (!in) fail(ErrorKind::CorruptBlob, fmt::format("'{}' is truncated", bin.string()));
        return x;
    };
    Rank1Model model;
    model.tensor_name = tensor_name;
    const auto n = static_cast<std::size_t>(next());
    model.steps.resize(n);
    for (auto& s : model.steps) s = static_cast<std::int64_t>(next());
    model.coefficients.resize(n);
    for (auto& c : model.coefficients) c = next();
    model.fit.a = next();
    model.fit.b = next();
    model.fit.r_squared = next();
    model.sigma1 = next();
    const auto d = static_cast<std::size_t>(next());
    model.v1.resize(d);
    in.read(reinterpret_cast<char*>(model.v1.data()), static_cast<std::streamsize>(d * 8));
    if (!in) fail(ErrorKind::CorruptBlob, fmt::format("'{}' is truncated", bin.string()));
    return model;
}

}  // namespace trajex
