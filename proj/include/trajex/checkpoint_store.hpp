// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint series container.
//
// Layout under a series root:
//
//   series.json                 {format_version, base_step, observed_steps, tensor_schema}
//   step_<t>/manifest.json      {format_version, step, tensors: [{name, shape, dtype, crc32c}]}
//   step_<t>/<name>.bin         raw little-endian elements, row-major, no header
//
// Blobs are checksummed with CRC32C (Castagnoli). A series is immutable once
// opened; reads of distinct (step, name) pairs may run concurrently.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <boost/crc.hpp>

#include "trajex/dtype.hpp"

namespace trajex {

inline constexpr int kFormatVersion = 1;

struct TensorSpec {
    std::string name;
    std::vector<std::int64_t> shape;
    DType dtype = DType::F32;

    std::size_t element_count() const;
    bool operator==(const TensorSpec&) const = default;
};

struct CheckpointManifest {
    std::int64_t step = 0;
    std::vector<TensorSpec> tensors;
    int format_version = kFormatVersion;
    std::map<std::string, std::uint32_t> checksums;

    const TensorSpec* find(std::string_view name) const;
};

/// Incremental CRC32C.
class Crc32c {
public:
    void update(std::span<const std::byte> bytes) { crc_.process_bytes(bytes.data(), bytes.size()); }
    std::uint32_t value() const { return crc_.checksum(); }

private:
    boost::crc_optimal<32, 0x1EDC6F41, 0xFFFFFFFF, 0xFFFFFFFF, true, true> crc_;
};

std::uint32_t crc32c(std::span<const std::byte> bytes);

/// Sequential reader over one blob. The checksum is verified once the last
/// element has been consumed, so a full streaming pass detects corruption.
class BlobReader {
public:
    BlobReader(const std::filesystem::path& path, const TensorSpec& spec, std::uint32_t expected_crc);

    /// Reads the next out.size() elements, widened to float64.
    void read(std::span<double> out);
    /// Skips `count` elements without decoding; disables checksum verification.
    void skip(std::size_t count);

    std::size_t position() const { return position_; }
    std::size_t size() const { return count_; }

private:
    std::filesystem::path path_;
    std::ifstream in_;
    DType dtype_;
    std::size_t count_;
    std::size_t position_ = 0;
    std::uint32_t expected_crc_;
    bool verify_ = true;
    Crc32c crc_;
    std::vector<std::byte> buffer_;
};

/// Sequential writer for one blob; narrows to the spec dtype (round to nearest even).
class BlobWriter {
public:
    BlobWriter(const std::filesystem::path& path, const TensorSpec& spec);

    void append(std::span<const double> values);
    /// Flushes and returns the blob checksum. Throws ShapeMismatch if fewer
    /// elements than the spec requires were appended.
    std::uint32_t finish();

    std::size_t position() const { return position_; }

private:
    std::filesystem::path path_;
    std::ofstream out_;
    DType dtype_;
    std::size_t count_;
    std::size_t position_ = 0;
    Crc32c crc_;
    std::vector<std::byte> buffer_;
};

class CheckpointSeries {
public:
    CheckpointSeries(std::filesystem::path root, CheckpointManifest base, std::vector<CheckpointManifest> observed);

    const std::filesystem::path& root() const { return root_; }
    const CheckpointManifest& base() const { return base_; }
    const std::vector<CheckpointManifest>& observed() const { return observed_; }
    const std::vector<TensorSpec>& schema() const { return base_.tensors; }

    std::vector<std::int64_t> observed_steps() const;
    bool has_step(std::int64_t step) const;
    const CheckpointManifest& manifest(std::int64_t step) const;
    const TensorSpec& tensor(std::string_view name) const;

    std::filesystem::path blob_path(std::int64_t step, std::string_view name) const;
    BlobReader open_blob(std::int64_t step, std::string_view name) const;

    /// Whole tensor, row-major, widened to float64. Verifies the checksum.
    std::vector<double> read_tensor(std::int64_t step, std::string_view name) const;

private:
    std::filesystem::path root_;
    CheckpointManifest base_;
    std::vector<CheckpointManifest> observed_;
};

std::filesystem::path step_dir(const std::filesystem::path& root, std::int64_t step);

/// Opens and validates a series. With `verify_checksums` every blob is read
/// once and its CRC32C checked; otherwise only sizes are checked up front and
/// checksums are verified on read.
CheckpointSeries open_series(const std::filesystem::path& root, bool verify_checksums = false);

/// Writes `step_<step>/` with one blob per schema tensor. Tensors may be
/// written from several threads; finish() emits the manifest in schema order.
class CheckpointWriter {
public:
    CheckpointWriter(std::filesystem::path root, std::int64_t step, std::vector<TensorSpec> schema);

    const TensorSpec& spec(std::string_view name) const;
    BlobWriter open_tensor(std::string_view name) const;
    void commit(std::string_view name, std::uint32_t crc);
    void write_tensor(std::string_view name, std::span<const double> values);

    CheckpointManifest finish();

private:
    std::filesystem::path root_;
    std::int64_t step_;
    std::vector<TensorSpec> schema_;
    std::map<std::string, std::uint32_t, std::less<>> checksums_;
    std::mutex mutex_;
};

CheckpointManifest write_checkpoint(const std::vector<TensorSpec>& schema,
                                    const std::map<std::string, std::vector<double>>& tensors, std::int64_t step,
                                    const std::filesystem::path& root);

void write_series_index(const std::filesystem::path& root, std::int64_t base_step,
                        const std::vector<std::int64_t>& observed_steps, const std::vector<TensorSpec>& schema);

/// Byte copy of one checkpoint directory into another root.
void copy_checkpoint(const CheckpointSeries& series, std::int64_t step, const std::filesystem::path& dst_root);

}  // namespace trajex
