// SPDX-License-Identifier: Apache-2.0
//
// Per-tensor delta trajectories: row t holds flatten(theta_t - theta_0).

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "trajex/checkpoint_store.hpp"

namespace trajex {

/// Element blocks used by every chunked pass. Chunk boundaries always fall on
/// multiples of this, so block-wise reductions are independent of chunk size.
inline constexpr std::size_t kBlockElements = 4096;

/// Tensors with fewer elements than this are held as a dense T x d matrix.
inline constexpr std::size_t kDefaultMaterializeThreshold = std::size_t{1} << 24;

/// A column slab [offset, offset + length) of every row.
struct RowChunk {
    std::size_t offset = 0;
    std::size_t length = 0;
    std::size_t rows = 0;
    const double* data = nullptr;
    std::size_t stride = 0;
    /// Base tensor values for the slab. Only populated for streamed trajectories.
    std::span<const double> base;

    std::span<const double> row(std::size_t t) const { return {data + t * stride, length}; }
};

class TrajectoryMatrix {
public:
    /// Dense trajectory; every row must have the same length.
    TrajectoryMatrix(std::string tensor_name, std::vector<std::int64_t> steps, std::vector<std::vector<double>> rows);

    /// Dense trajectory over a row-major steps.size() x d buffer.
    static TrajectoryMatrix from_flat(std::string tensor_name, std::vector<std::int64_t> steps,
                                      std::vector<double> flat);
    /// Trajectory that re-reads the series blobs on every pass; at most one
    /// chunk per step is resident at a time.
    static TrajectoryMatrix streamed(const CheckpointSeries& series, std::string tensor_name,
                                     std::vector<std::int64_t> steps);

    const std::string& tensor_name() const { return name_; }
    const std::vector<std::int64_t>& steps() const { return steps_; }
    std::size_t rows() const { return steps_.size(); }
    std::size_t dim() const { return dim_; }
    bool materialized() const { return dense_ != nullptr; }

    /// Row view; only valid for materialized trajectories.
    std::span<const double> row(std::size_t t) const;
    /// Copy of one row for either storage mode.
    std::vector<double> load_row(std::size_t t) const;

    /// Trajectory restricted to its first `count` rows (shares storage).
    TrajectoryMatrix prefix(std::size_t count) const;

    /// Visits the matrix in column slabs, left to right. `chunk_elements` of 0
    /// picks a size from the row count; it is rounded to kBlockElements.
    void for_each_chunk(const std::function<void(const RowChunk&)>& visit, std::size_t chunk_elements = 0) const;

private:
    TrajectoryMatrix() = default;

    std::string name_;
    std::vector<std::int64_t> steps_;
    std::size_t dim_ = 0;
    std::shared_ptr<const std::vector<double>> dense_;
    std::shared_ptr<const CheckpointSeries> series_;
};

/// Rows for every observed step <= upto_step. Dense when the tensor has fewer
/// than `materialize_threshold` elements, streamed otherwise.
TrajectoryMatrix build_trajectory(const CheckpointSeries& series, const std::string& name, std::int64_t upto_step,
                                  std::size_t materialize_threshold = kDefaultMaterializeThreshold);

/// Euclidean norm of each row.
std::vector<double> delta_norms(const TrajectoryMatrix& traj);

/// Neumaier-compensated accumulator.
class CompensatedSum {
public:
    void add(double x) {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x)) {
            comp_ += (sum_ - t) + x;
        } else {
            comp_ += (x - t) + sum_;
        }
        sum_ = t;
    }
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

/// Plain sequential dot product; the per-block kernel for every reduction.
double block_dot(const double* a, const double* b, std::size_t n);

/// Dot product over consecutive kBlockElements blocks (starting at a block
/// boundary), each block folded into `acc` by compensated summation.
void accumulate_dot(std::span<const double> a, std::span<const double> b, CompensatedSum& acc);

}  // namespace trajex
