// SPDX-License-Identifier: Apache-2.0

#include "trajex/trajectory.hpp"

#include <algorithm>

#include <fmt/core.h>

#include "trajex/error.hpp"

namespace trajex {

namespace {

// Budget for one streamed slab across all rows, in float64 elements (32 MiB).
constexpr std::size_t kStreamBudgetElements = std::size_t{1} << 22;
constexpr std::size_t kMaxChunkElements = std::size_t{1} << 16;

std::size_t pick_chunk(std::size_t rows, std::size_t requested) {
    std::size_t chunk = requested;
    if (chunk == 0) chunk = std::clamp(kStreamBudgetElements / (rows + 1), kBlockElements, kMaxChunkElements);
    chunk = std::max(kBlockElements, chunk - chunk % kBlockElements);
    return chunk;
}

}  // namespace

double block_dot(const double* a, const double* b, std::size_t n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
    return (s0 + s1) + (s2 + s3);
}

void accumulate_dot(std::span<const double> a, std::span<const double> b, CompensatedSum& acc) {
    for (std::size_t offset = 0; offset < a.size(); offset += kBlockElements) {
        const std::size_t n = std::min(kBlockElements, a.size() - offset);
        acc.add(block_dot(a.data() + offset, b.data() + offset, n));
    }
}

namespace {

void check_steps(const std::string& name, const std::vector<std::int64_t>& steps) {
    if (steps.empty()) fail(ErrorKind::EmptyWindow, fmt::format("trajectory '{}' has no rows", name));
    for (std::size_t i = 1; i < steps.size(); ++i) {
        if (steps[i] <= steps[i - 1]) {
            fail(ErrorKind::InvalidArgument, fmt::format("trajectory '{}' steps must strictly increase", name));
        }
    }
}

}  // namespace

TrajectoryMatrix::TrajectoryMatrix(std::string tensor_name, std::vector<std::int64_t> steps,
                                   std::vector<std::vector<double>> rows)
    : name_(std::move(tensor_name)), steps_(std::move(steps)) {
    if (rows.size() != steps_.size()) {
        fail(ErrorKind::DimensionMismatch, fmt::format("trajectory '{}' has {} rows for {} steps", name_, rows.size(),
                                                       steps_.size()));
    }
    check_steps(name_, steps_);
    dim_ = rows.front().size();
    auto flat = std::make_shared<std::vector<double>>();
    flat->reserve(rows.size() * dim_);
    for (const auto& r : rows) {
        if (r.size() != dim_) fail(ErrorKind::DimensionMismatch, fmt::format("ragged rows in trajectory '{}'", name_));
        flat->insert(flat->end(), r.begin(), r.end());
    }
    dense_ = std::move(flat);
}

TrajectoryMatrix TrajectoryMatrix::from_flat(std::string tensor_name, std::vector<std::int64_t> steps,
                                             std::vector<double> flat) {
    check_steps(tensor_name, steps);
    if (flat.size() % steps.size() != 0) {
        fail(ErrorKind::DimensionMismatch,
             fmt::format("trajectory '{}': {} values do not split into {} rows", tensor_name, flat.size(), steps.size()));
    }
    TrajectoryMatrix m;
    m.name_ = std::move(tensor_name);
    m.steps_ = std::move(steps);
    m.dim_ = flat.size() / m.steps_.size();
    m.dense_ = std::make_shared<const std::vector<double>>(std::move(flat));
    return m;
}

TrajectoryMatrix TrajectoryMatrix::streamed(const CheckpointSeries& series, std::string tensor_name,
                                            std::vector<std::int64_t> steps) {
    if (steps.empty()) fail(ErrorKind::EmptyWindow, fmt::format("trajectory '{}' has no rows", tensor_name));
    TrajectoryMatrix traj;
    traj.dim_ = series.tensor(tensor_name).element_count();
    for (auto step : steps) series.manifest(step);
    traj.name_ = std::move(tensor_name);
    traj.steps_ = std::move(steps);
    traj.series_ = std::make_shared<const CheckpointSeries>(series);
    return traj;
}

std::span<const double> TrajectoryMatrix::row(std::size_t t) const {
    if (!dense_) fail(ErrorKind::InvalidArgument, fmt::format("trajectory '{}' is streamed", name_));
    if (t >= rows()) fail(ErrorKind::BadStepIndex, fmt::format("row {} out of range for '{}'", t, name_));
    return {dense_->data() + t * dim_, dim_};
}

std::vector<double> TrajectoryMatrix::load_row(std::size_t t) const {
    if (t >= rows()) fail(ErrorKind::BadStepIndex, fmt::format("row {} out of range for '{}'", t, name_));
    if (dense_) {
        auto r = row(t);
        return {r.begin(), r.end()};
    }
    std::vector<double> values = series_->read_tensor(steps_[t], name_);
    const std::vector<double> base = series_->read_tensor(series_->base().step, name_);
    for (std::size_t i = 0; i < values.size(); ++i) values[i] -= base[i];
    return values;
}

TrajectoryMatrix TrajectoryMatrix::prefix(std::size_t count) const {
    if (count == 0 || count > rows()) {
        fail(ErrorKind::BadStepIndex, fmt::format("prefix of {} rows requested from '{}' with {}", count, name_, rows()));
    }
    TrajectoryMatrix out = *this;
    out.steps_.resize(count);
    return out;
}

void TrajectoryMatrix::for_each_chunk(const std::function<void(const RowChunk&)>& visit,
                                      std::size_t chunk_elements) const {
    const std::size_t chunk = pick_chunk(rows(), chunk_elements);
    if (dense_) {
        for (std::size_t offset = 0; offset < dim_; offset += chunk) {
            RowChunk c;
            c.offset = offset;
            c.length = std::min(chunk, dim_ - offset);
            c.rows = rows();
            c.data = dense_->data() + offset;
            c.stride = dim_;
            visit(c);
        }
        return;
    }

    BlobReader base_reader = series_->open_blob(series_->base().step, name_);
    std::vector<BlobReader> readers;
    readers.reserve(rows());
    for (auto step : steps_) readers.push_back(series_->open_blob(step, name_));

    std::vector<double> slab(rows() * chunk);
    std::vector<double> base(chunk);
    for (std::size_t offset = 0; offset < dim_; offset += chunk) {
        const std::size_t len = std::min(chunk, dim_ - offset);
        std::span<double> base_view(base.data(), len);
        base_reader.read(base_view);
        for (std::size_t t = 0; t < rows(); ++t) {
            std::span<double> r(slab.data() + t * len, len);
            readers[t].read(r);
            for (std::size_t i = 0; i < len; ++i) r[i] -= base_view[i];
        }
        RowChunk c;
        c.offset = offset;
        c.length = len;
        c.rows = rows();
        c.data = slab.data();
        c.stride = len;
        c.base = base_view;
        visit(c);
    }
}

TrajectoryMatrix build_trajectory(const CheckpointSeries& series, const std::string& name, std::int64_t upto_step,
                                  std::size_t materialize_threshold) {
    const TensorSpec& spec = series.tensor(name);
    std::vector<std::int64_t> steps;
    for (auto step : series.observed_steps()) {
        if (step <= upto_step) steps.push_back(step);
    }
    if (steps.empty()) {
        fail(ErrorKind::EmptyWindow, fmt::format("no observed step <= {} for tensor '{}'", upto_step, name));
    }
    if (spec.element_count() >= materialize_threshold) return TrajectoryMatrix::streamed(series, name, steps);

    const std::vector<double> base = series.read_tensor(series.base().step, name);
    const std::size_t d = base.size();
    std::vector<double> flat(steps.size() * d);
    for (std::size_t t = 0; t < steps.size(); ++t) {
        const std::span<double> row(flat.data() + t * d, d);
        series.open_blob(steps[t], name).read(row);
        for (std::size_t i = 0; i < d; ++i) row[i] -= base[i];
    }
    return TrajectoryMatrix::from_flat(name, std::move(steps), std::move(flat));
}

std::vector<double> delta_norms(const TrajectoryMatrix& traj) {
    std::vector<CompensatedSum> sums(traj.rows());
    traj.for_each_chunk([&](const RowChunk& c) {
        for (std::size_t t = 0; t < c.rows; ++t) accumulate_dot(c.row(t), c.row(t), sums[t]);
    });
    std::vector<double> norms;
    norms.reserve(sums.size());
    for (const auto& s : sums) norms.push_back(std::sqrt(s.value()));
    return norms;
}

}  // namespace trajex
