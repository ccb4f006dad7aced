// SPDX-License-Identifier: Apache-2.0

#include "trajex/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <fmt/core.h>

#include "trajex/error.hpp"
#include "trajex/parallel.hpp"

namespace fs = std::filesystem;

namespace trajex {

namespace {

constexpr std::size_t kAlignChunk = 16 * kBlockElements;

std::ofstream open_csv(const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorKind::IoFailure, fmt::format("cannot write '{}'", path.string()));
    return out;
}

std::string format_optional(const std::optional<double>& value) {
    return value ? format_double(*value) : std::string("undefined");
}

std::optional<double> mean_of(const std::vector<std::optional<double>>& values) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& v : values) {
        if (v) {
            sum += *v;
            ++count;
        }
    }
    if (count == 0) return std::nullopt;
    return sum / static_cast<double>(count);
}

TensorAlignment align_tensor(const CheckpointSeries& predicted, const CheckpointSeries& actual,
                             const TensorSpec& spec, std::int64_t step, std::int64_t base_step) {
    BlobReader pred = predicted.open_blob(step, spec.name);
    BlobReader act = actual.open_blob(step, spec.name);
    BlobReader base = actual.open_blob(base_step, spec.name);
    const std::size_t d = spec.element_count();
    std::vector<double> p(kAlignChunk), a(kAlignChunk), b(kAlignChunk);
    CompensatedSum dot, pp, aa;
    for (std::size_t offset = 0; offset < d; offset += kAlignChunk) {
        const std::size_t len = std::min(kAlignChunk, d - offset);
        std::span<double> ps(p.data(), len), as(a.data(), len), bs(b.data(), len);
        pred.read(ps);
        act.read(as);
        base.read(bs);
        for (std::size_t i = 0; i < len; ++i) {
            ps[i] -= bs[i];
            as[i] -= bs[i];
        }
        accumulate_dot(ps, as, dot);
        accumulate_dot(ps, ps, pp);
        accumulate_dot(as, as, aa);
    }
    TensorAlignment out;
    out.tensor_name = spec.name;
    const double pn2 = pp.value();
    const double an2 = aa.value();
    if (pn2 > 0.0 && an2 > 0.0) {
        out.cosine = std::clamp(dot.value() / std::sqrt(pn2 * an2), -1.0, 1.0);
    }
    if (an2 > 0.0) out.norm_ratio = std::sqrt(pn2 / an2);
    return out;
}

}  // namespace

std::string format_double(double value) { return fmt::format("{:.17g}", value); }

std::vector<double> explained_variance(const SpectralDecomposition& decomposition) {
    double total = 0.0;
    for (double s : decomposition.singular_values) total += s * s;
    std::vector<double> out;
    out.reserve(decomposition.singular_values.size());
    for (double s : decomposition.singular_values) out.push_back(total > 0.0 ? s * s / total : 0.0);
    return out;
}

LinearityReport linearity_report(const CheckpointSeries& series, std::int64_t t_cut, std::size_t rank,
                                 double threshold, std::size_t workers) {
    std::size_t window = 0;
    for (auto step : series.observed_steps()) {
        if (step <= t_cut) ++window;
    }
    if (window < 2) {
        fail(ErrorKind::EmptyWindow, fmt::format("linearity needs at least 2 observed steps <= {}, found {}", t_cut,
                                                 window));
    }
    if (rank < 1) fail(ErrorKind::RankOutOfRange, "rank must be at least 1");

    std::vector<TensorSpec> specs = series.schema();
    std::sort(specs.begin(), specs.end(), [](const auto& x, const auto& y) { return x.name < y.name; });
    std::vector<std::optional<TensorDiagnostics>> results(specs.size());
    parallel_for(specs.size(), workers, [&](std::size_t i) {
        const TrajectoryMatrix traj = build_trajectory(series, specs[i].name, t_cut);
        const Matrix gram = gram_matrix(traj);
        if (gram.frobenius_norm() == 0.0) return;
        const std::size_t r = std::min(rank, traj.rows());
        const SpectralDecomposition dec = truncated_svd_from_gram(traj, gram, r, DegeneratePolicy::Keep);
        TensorDiagnostics diag;
        diag.tensor_name = specs[i].name;
        diag.steps = traj.steps();
        diag.sigma_top_k = dec.singular_values;
        diag.explained_variance = explained_variance(dec);
        for (std::size_t k = 0; k < r; ++k) diag.coefficient_series.push_back(dec.coefficient_series(k));
        const std::vector<double> ts(diag.steps.begin(), diag.steps.end());
        const LinearFit fit = linear_fit(ts, diag.coefficient_series[0]);
        diag.r_squared = fit.r_squared;
        diag.slope = fit.a;
        diag.intercept = fit.b;
        results[i] = std::move(diag);
    });

    LinearityReport report;
    report.t_cut = t_cut;
    report.threshold = threshold;
    std::size_t above = 0;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        if (!results[i]) {
            report.skipped.push_back(specs[i].name);
            continue;
        }
        if (results[i]->r_squared > threshold) ++above;
        report.records.push_back(std::move(*results[i]));
    }
    report.fraction_above =
        report.records.empty() ? 0.0 : static_cast<double>(above) / static_cast<double>(report.records.size());
    return report;
}

std::vector<AlignmentRecord> alignment_report(const CheckpointSeries& predicted, const CheckpointSeries& actual,
                                              const std::vector<std::int64_t>& steps, std::size_t workers,
                                              std::optional<std::int64_t> base_step) {
    if (predicted.schema() != actual.schema()) {
        fail(ErrorKind::SchemaMismatch, "predicted and actual series have different tensor schemas");
    }
    for (auto step : steps) {
        if (!predicted.has_step(step)) fail(ErrorKind::MissingStep, fmt::format("predicted series lacks step {}", step));
        if (!actual.has_step(step)) fail(ErrorKind::MissingStep, fmt::format("actual series lacks step {}", step));
    }
    const std::int64_t base = base_step.value_or(actual.base().step);
    if (base != actual.base().step && !actual.has_step(base)) {
        fail(ErrorKind::MissingStep, fmt::format("actual series lacks base step {}", base));
    }
    std::vector<TensorSpec> specs = actual.schema();
    std::sort(specs.begin(), specs.end(), [](const auto& x, const auto& y) { return x.name < y.name; });

    std::vector<AlignmentRecord> records;
    for (auto step : steps) {
        AlignmentRecord record;
        record.step = step;
        record.per_tensor.resize(specs.size());
        parallel_for(specs.size(), workers,
                     [&](std::size_t i) { record.per_tensor[i] = align_tensor(predicted, actual, specs[i], step, base); });
        std::vector<std::optional<double>> cosines, ratios;
        for (const auto& t : record.per_tensor) {
            cosines.push_back(t.cosine);
            ratios.push_back(t.norm_ratio);
        }
        record.mean_cosine = mean_of(cosines);
        record.mean_norm_ratio = mean_of(ratios);
        records.push_back(std::move(record));
    }
    return records;
}

std::vector<CoefficientRow> coefficient_dump(const TrajectoryMatrix& traj, std::size_t rank) {
    if (rank < 1 || rank > traj.rows()) {
        fail(ErrorKind::RankOutOfRange, fmt::format("rank {} outside [1, {}]", rank, traj.rows()));
    }
    const SpectralDecomposition dec = truncated_svd(traj, rank, DegeneratePolicy::Keep);
    const std::vector<double> ev = explained_variance(dec);
    std::vector<CoefficientRow> rows;
    rows.reserve(traj.rows() * rank);
    for (std::size_t t = 0; t < traj.rows(); ++t) {
        for (std::size_t k = 0; k < rank; ++k) rows.push_back({traj.steps()[t], k, dec.coefficients(t, k), ev[k]});
    }
    return rows;
}

void write_linearity_csv(const LinearityReport& report, const fs::path& path) {
    std::ofstream out = open_csv(path);
    out << "tensor,r2,slope,intercept,sigma1\n";
    for (const auto& r : report.records) {
        out << r.tensor_name << ',' << format_double(r.r_squared) << ',' << format_double(r.slope) << ','
            << format_double(r.intercept) << ',' << format_double(r.sigma_top_k.front()) << '\n';
    }
}

void write_explained_variance_csv(const LinearityReport& report, const fs::path& path) {
    std::ofstream out = open_csv(path);
    out << "tensor,component,sigma,fraction\n";
    for (const auto& r : report.records) {
        for (std::size_t k = 0; k < r.sigma_top_k.size(); ++k) {
            out << r.tensor_name << ',' << k + 1 << ',' << format_double(r.sigma_top_k[k]) << ','
                << format_double(r.explained_variance[k]) << '\n';
        }
    }
}

void write_coefficients_csv(const LinearityReport& report, const fs::path& path) {
    std::ofstream out = open_csv(path);
    out << "tensor,step,component,value,explained_variance\n";
    for (const auto& r : report.records) {
        for (std::size_t t = 0; t < r.steps.size(); ++t) {
            for (std::size_t k = 0; k < r.coefficient_series.size(); ++k) {
                out << r.tensor_name << ',' << r.steps[t] << ',' << k + 1 << ','
                    << format_double(r.coefficient_series[k][t]) << ',' << format_double(r.explained_variance[k])
                    << '\n';
            }
        }
    }
}

void write_alignment_csv(const std::vector<AlignmentRecord>& records, const fs::path& path) {
    std::ofstream out = open_csv(path);
    out << "tensor,step,cosine,norm_ratio\n";
    for (const auto& record : records) {
        for (const auto& t : record.per_tensor) {
            out << t.tensor_name << ',' << record.step << ',' << format_optional(t.cosine) << ','
                << format_optional(t.norm_ratio) << '\n';
        }
    }
}

void write_alignment_summary_csv(const std::vector<AlignmentRecord>& records, const fs::path& path) {
    std::ofstream out = open_csv(path);
    out << "step,mean_cosine,mean_norm_ratio\n";
    for (const auto& record : records) {
        out << record.step << ',' << format_optional(record.mean_cosine) << ','
            << format_optional(record.mean_norm_ratio) << '\n';
    }
}

}  // namespace trajex
