// SPDX-License-Identifier: Apache-2.0

#include "trajex/checkpoint_store.hpp"

#include <algorithm>
#include <set>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "trajex/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace trajex {

namespace {

constexpr std::size_t kIoChunkElements = std::size_t{1} << 16;

json read_json(const fs::path& path, ErrorKind missing_kind) {
    std::ifstream in(path);
    if (!in) fail(missing_kind, fmt::format("cannot open '{}'", path.string()));
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorKind::BadConfig, fmt::format("malformed JSON in '{}': {}", path.string(), e.what()));
    }
}

void write_json(const fs::path& path, const json& doc) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorKind::IoFailure, fmt::format("cannot write '{}'", path.string()));
    out << doc.dump(2) << '\n';
    if (!out) fail(ErrorKind::IoFailure, fmt::format("write failed for '{}'", path.string()));
}

void validate_spec(const TensorSpec& spec) {
    if (spec.name.empty() || spec.name.find('/') != std::string::npos || spec.name.front() == '.') {
        fail(ErrorKind::InvalidArgument, fmt::format("invalid tensor name '{}'", spec.name));
    }
    for (auto extent : spec.shape) {
        if (extent <= 0) fail(ErrorKind::InvalidArgument, fmt::format("tensor '{}' has a non-positive extent", spec.name));
    }
}

void validate_schema(const std::vector<TensorSpec>& schema) {
    if (schema.empty()) fail(ErrorKind::InvalidArgument, "tensor schema is empty");
    std::set<std::string> names;
    for (const auto& spec : schema) {
        validate_spec(spec);
        if (!names.insert(spec.name).second) {
            fail(ErrorKind::InvalidArgument, fmt::format("duplicate tensor name '{}'", spec.name));
        }
    }
}

json spec_to_json(const TensorSpec& spec) {
    return json{{"name", spec.name}, {"shape", spec.shape}, {"dtype", std::string(dtype_name(spec.dtype))}};
}

TensorSpec spec_from_json(const json& j) {
    TensorSpec spec;
    spec.name = j.at("name").get<std::string>();
    spec.shape = j.at("shape").get<std::vector<std::int64_t>>();
    spec.dtype = parse_dtype(j.at("dtype").get<std::string>());
    return spec;
}

CheckpointManifest read_manifest(const fs::path& root, std::int64_t step, const std::vector<TensorSpec>& schema) {
    const fs::path path = step_dir(root, step) / "manifest.json";
    const json doc = read_json(path, ErrorKind::MissingIndex);
    CheckpointManifest manifest;
    try {
        manifest.format_version = doc.at("format_version").get<int>();
        manifest.step = doc.at("step").get<std::int64_t>();
        for (const auto& entry : doc.at("tensors")) {
            TensorSpec spec = spec_from_json(entry);
            manifest.checksums[spec.name] = entry.at("crc32c").get<std::uint32_t>();
            manifest.tensors.push_back(std::move(spec));
        }
    } catch (const json::exception& e) {
        fail(ErrorKind::BadConfig, fmt::format("malformed manifest '{}': {}", path.string(), e.what()));
    }
    if (manifest.format_version != kFormatVersion) {
        fail(ErrorKind::BadConfig, fmt::format("unsupported format_version {} in '{}'", manifest.format_version,
                                               path.string()));
    }
    if (manifest.step != step) {
        fail(ErrorKind::SchemaMismatch, fmt::format("manifest '{}' records step {}", path.string(), manifest.step));
    }
    for (const auto& expected : schema) {
        const TensorSpec* found = manifest.find(expected.name);
        if (found == nullptr || !(*found == expected)) {
            fail(ErrorKind::SchemaMismatch, fmt::format("tensor '{}' at step {}", expected.name, step));
        }
    }
    if (manifest.tensors.size() != schema.size()) {
        for (const auto& spec : manifest.tensors) {
            const bool known = std::any_of(schema.begin(), schema.end(),
                                           [&](const TensorSpec& s) { return s.name == spec.name; });
            if (!known) fail(ErrorKind::SchemaMismatch, fmt::format("tensor '{}' at step {}", spec.name, step));
        }
        fail(ErrorKind::SchemaMismatch, fmt::format("duplicate tensor entries at step {}", step));
    }
    // Present manifests in schema order.
    std::vector<TensorSpec> ordered;
    ordered.reserve(schema.size());
    for (const auto& spec : schema) ordered.push_back(*manifest.find(spec.name));
    manifest.tensors = std::move(ordered);
    return manifest;
}

}  // namespace

std::size_t TensorSpec::element_count() const {
    std::size_t count = 1;
    for (auto extent : shape) count *= static_cast<std::size_t>(extent);
    return count;
}

const TensorSpec* CheckpointManifest::find(std::string_view name) const {
    for (const auto& spec : tensors) {
        if (spec.name == name) return &spec;
    }
    return nullptr;
}

std::uint32_t crc32c(std::span<const std::byte> bytes) {
    Crc32c crc;
    crc.update(bytes);
    return crc.value();
}

// --- BlobReader ---------------------------------------------------------------

BlobReader::BlobReader(const fs::path& path, const TensorSpec& spec, std::uint32_t expected_crc)
    : path_(path), in_(path, std::ios::binary), dtype_(spec.dtype), count_(spec.element_count()),
      expected_crc_(expected_crc) {
    if (!in_) fail(ErrorKind::IoFailure, fmt::format("cannot open blob '{}'", path.string()));
}

void BlobReader::read(std::span<double> out) {
    if (position_ + out.size() > count_) {
        fail(ErrorKind::ShapeMismatch, fmt::format("read past end of blob '{}'", path_.string()));
    }
    const std::size_t bytes = out.size() * dtype_size(dtype_);
    buffer_.resize(bytes);
    in_.read(reinterpret_cast<char*>(buffer_.data()), static_cast<std::streamsize>(bytes));
    if (static_cast<std::size_t>(in_.gcount()) != bytes) {
        fail(ErrorKind::CorruptBlob, fmt::format("blob '{}' is truncated", path_.string()));
    }
    if (verify_) crc_.update(buffer_);
    decode(buffer_, dtype_, out);
    position_ += out.size();
    if (position_ == count_ && verify_ && crc_.value() != expected_crc_) {
        fail(ErrorKind::CorruptBlob, fmt::format("checksum mismatch in '{}'", path_.string()));
    }
}

void BlobReader::skip(std::size_t count) {
    if (count == 0) return;
    if (position_ + count > count_) {
        fail(ErrorKind::ShapeMismatch, fmt::format("skip past end of blob '{}'", path_.string()));
    }
    in_.seekg(static_cast<std::streamoff>(count * dtype_size(dtype_)), std::ios::cur);
    position_ += count;
    verify_ = false;
}

// --- BlobWriter ---------------------------------------------------------------

BlobWriter::BlobWriter(const fs::path& path, const TensorSpec& spec)
    : path_(path), out_(path, std::ios::binary | std::ios::trunc), dtype_(spec.dtype),
      count_(spec.element_count()) {
    if (!out_) fail(ErrorKind::IoFailure, fmt::format("cannot create blob '{}'", path.string()));
}

void BlobWriter::append(std::span<const double> values) {
    if (position_ + values.size() > count_) {
        fail(ErrorKind::ShapeMismatch, fmt::format("too many elements for blob '{}'", path_.string()));
    }
    buffer_.resize(values.size() * dtype_size(dtype_));
    encode(values, dtype_, buffer_);
    crc_.update(buffer_);
    out_.write(reinterpret_cast<const char*>(buffer_.data()), static_cast<std::streamsize>(buffer_.size()));
    if (!out_) fail(ErrorKind::IoFailure, fmt::format("write failed for blob '{}'", path_.string()));
    position_ += values.size();
}

std::uint32_t BlobWriter::finish() {
    if (position_ != count_) {
        fail(ErrorKind::ShapeMismatch,
             fmt::format("blob '{}' received {} of {} elements", path_.string(), position_, count_));
    }
    out_.flush();
    out_.close();
    if (!out_) fail(ErrorKind::IoFailure, fmt::format("close failed for blob '{}'", path_.string()));
    return crc_.value();
}

// --- CheckpointSeries ---------------------------------------------------------

CheckpointSeries::CheckpointSeries(fs::path root, CheckpointManifest base, std::vector<CheckpointManifest> observed)
    : root_(std::move(root)), base_(std::move(base)), observed_(std::move(observed)) {}

std::vector<std::int64_t> CheckpointSeries::observed_steps() const {
    std::vector<std::int64_t> steps;
    steps.reserve(observed_.size());
    for (const auto& m : observed_) steps.push_back(m.step);
    return steps;
}

bool CheckpointSeries::has_step(std::int64_t step) const {
    if (step == base_.step) return true;
    return std::any_of(observed_.begin(), observed_.end(), [&](const auto& m) { return m.step == step; });
}

const CheckpointManifest& CheckpointSeries::manifest(std::int64_t step) const {
    if (step == base_.step) return base_;
    auto it = std::lower_bound(observed_.begin(), observed_.end(), step,
                               [](const CheckpointManifest& m, std::int64_t s) { return m.step < s; });
    if (it == observed_.end() || it->step != step) {
        fail(ErrorKind::UnknownStep, fmt::format("step {} is not in series '{}'", step, root_.string()));
    }
    return *it;
}

const TensorSpec& CheckpointSeries::tensor(std::string_view name) const {
    const TensorSpec* spec = base_.find(name);
    if (spec == nullptr) fail(ErrorKind::UnknownTensor, fmt::format("tensor '{}' is not in the schema", name));
    return *spec;
}

fs::path CheckpointSeries::blob_path(std::int64_t step, std::string_view name) const {
    return step_dir(root_, step) / (std::string(name) + ".bin");
}

BlobReader CheckpointSeries::open_blob(std::int64_t step, std::string_view name) const {
    const CheckpointManifest& m = manifest(step);
    const TensorSpec& spec = tensor(name);
    return BlobReader(blob_path(step, name), spec, m.checksums.at(spec.name));
}

std::vector<double> CheckpointSeries::read_tensor(std::int64_t step, std::string_view name) const {
    BlobReader reader = open_blob(step, name);
    std::vector<double> values(reader.size());
    reader.read(values);
    return values;
}

fs::path step_dir(const fs::path& root, std::int64_t step) { return root / fmt::format("step_{}", step); }

CheckpointSeries open_series(const fs::path& root, bool verify_checksums) {
    const fs::path index_path = root / "series.json";
    if (!fs::exists(index_path)) fail(ErrorKind::MissingIndex, fmt::format("no series.json under '{}'", root.string()));
    const json index = read_json(index_path, ErrorKind::MissingIndex);

    std::int64_t base_step = 0;
    std::vector<std::int64_t> observed_steps;
    std::vector<TensorSpec> schema;
    try {
        const int version = index.at("format_version").get<int>();
        if (version != kFormatVersion) {
            fail(ErrorKind::BadConfig, fmt::format("unsupported format_version {}", version));
        }
        base_step = index.at("base_step").get<std::int64_t>();
        observed_steps = index.at("observed_steps").get<std::vector<std::int64_t>>();
        for (const auto& entry : index.at("tensor_schema")) schema.push_back(spec_from_json(entry));
    } catch (const json::exception& e) {
        fail(ErrorKind::BadConfig, fmt::format("malformed series.json: {}", e.what()));
    }
    validate_schema(schema);
    if (base_step < 0) fail(ErrorKind::InvalidArgument, "base_step must be non-negative");
    std::int64_t previous = base_step;
    for (auto step : observed_steps) {
        if (step <= previous) {
            fail(ErrorKind::InvalidArgument,
                 fmt::format("observed steps must strictly increase above base step {} (got {} after {})", base_step,
                             step, previous));
        }
        previous = step;
    }

    CheckpointManifest base = read_manifest(root, base_step, schema);
    std::vector<CheckpointManifest> observed;
    observed.reserve(observed_steps.size());
    for (auto step : observed_steps) observed.push_back(read_manifest(root, step, schema));

    CheckpointSeries series(root, std::move(base), std::move(observed));

    std::vector<std::int64_t> all_steps{base_step};
    all_steps.insert(all_steps.end(), observed_steps.begin(), observed_steps.end());
    for (auto step : all_steps) {
        for (const auto& spec : schema) {
            const fs::path blob = series.blob_path(step, spec.name);
            std::error_code ec;
            const auto size = fs::file_size(blob, ec);
            if (ec) fail(ErrorKind::IoFailure, fmt::format("missing blob '{}'", blob.string()));
            if (size != spec.element_count() * dtype_size(spec.dtype)) {
                fail(ErrorKind::CorruptBlob, fmt::format("blob '{}' has {} bytes, expected {}", blob.string(), size,
                                                         spec.element_count() * dtype_size(spec.dtype)));
            }
            if (verify_checksums) {
                BlobReader reader = series.open_blob(step, spec.name);
                std::vector<double> chunk;
                while (reader.position() < reader.size()) {
                    chunk.resize(std::min(kIoChunkElements, reader.size() - reader.position()));
                    reader.read(chunk);
                }
            }
        }
    }
    return series;
}

// --- writing --------------------------------------------------------------------

CheckpointWriter::CheckpointWriter(fs::path root, std::int64_t step, std::vector<TensorSpec> schema)
    : root_(std::move(root)), step_(step), schema_(std::move(schema)) {
    validate_schema(schema_);
    if (step_ < 0) fail(ErrorKind::InvalidArgument, "checkpoint step must be non-negative");
    std::error_code ec;
    fs::create_directories(step_dir(root_, step_), ec);
    if (ec) fail(ErrorKind::IoFailure, fmt::format("cannot create '{}': {}", step_dir(root_, step_).string(), ec.message()));
}

const TensorSpec& CheckpointWriter::spec(std::string_view name) const {
    for (const auto& s : schema_) {
        if (s.name == name) return s;
    }
    fail(ErrorKind::UnknownTensor, fmt::format("tensor '{}' is not in the schema", name));
}

BlobWriter CheckpointWriter::open_tensor(std::string_view name) const {
    return BlobWriter(step_dir(root_, step_) / (std::string(name) + ".bin"), spec(name));
}

void CheckpointWriter::commit(std::string_view name, std::uint32_t crc) {
    std::lock_guard lock(mutex_);
    checksums_[std::string(name)] = crc;
}

void CheckpointWriter::write_tensor(std::string_view name, std::span<const double> values) {
    const TensorSpec& s = spec(name);
    if (values.size() != s.element_count()) {
        fail(ErrorKind::ShapeMismatch,
             fmt::format("tensor '{}' expects {} elements, got {}", name, s.element_count(), values.size()));
    }
    BlobWriter writer = open_tensor(name);
    for (std::size_t offset = 0; offset < values.size(); offset += kIoChunkElements) {
        writer.append(values.subspan(offset, std::min(kIoChunkElements, values.size() - offset)));
    }
    commit(name, writer.finish());
}

CheckpointManifest CheckpointWriter::finish() {
    std::lock_guard lock(mutex_);
    CheckpointManifest manifest;
    manifest.step = step_;
    manifest.tensors = schema_;
    json tensors = json::array();
    for (const auto& spec : schema_) {
        auto it = checksums_.find(spec.name);
        if (it == checksums_.end()) {
            fail(ErrorKind::ShapeMismatch, fmt::format("tensor '{}' was never written at step {}", spec.name, step_));
        }
        manifest.checksums[spec.name] = it->second;
        json entry = spec_to_json(spec);
        entry["crc32c"] = it->second;
        tensors.push_back(std::move(entry));
    }
    write_json(step_dir(root_, step_) / "manifest.json",
               json{{"format_version", kFormatVersion}, {"step", step_}, {"tensors", std::move(tensors)}});
    return manifest;
}

CheckpointManifest write_checkpoint(const std::vector<TensorSpec>& schema,
                                    const std::map<std::string, std::vector<double>>& tensors, std::int64_t step,
                                    const fs::path& root) {
    for (const auto& spec : schema) {
        auto it = tensors.find(spec.name);
        if (it == tensors.end()) fail(ErrorKind::ShapeMismatch, fmt::format("no values for tensor '{}'", spec.name));
        if (it->second.size() != spec.element_count()) {
            fail(ErrorKind::ShapeMismatch, fmt::format("tensor '{}' expects {} elements, got {}", spec.name,
                                                       spec.element_count(), it->second.size()));
        }
    }
    CheckpointWriter writer(root, step, schema);
    for (const auto& spec : schema) writer.write_tensor(spec.name, tensors.at(spec.name));
    return writer.finish();
}

void write_series_index(const fs::path& root, std::int64_t base_step, const std::vector<std::int64_t>& observed_steps,
                        const std::vector<TensorSpec>& schema) {
    validate_schema(schema);
    json specs = json::array();
    for (const auto& spec : schema) specs.push_back(spec_to_json(spec));
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) fail(ErrorKind::IoFailure, fmt::format("cannot create '{}': {}", root.string(), ec.message()));
    write_json(root / "series.json", json{{"format_version", kFormatVersion},
                                          {"base_step", base_step},
                                          {"observed_steps", observed_steps},
                                          {"tensor_schema", std::move(specs)}});
}

void copy_checkpoint(const CheckpointSeries& series, std::int64_t step, const fs::path& dst_root) {
    const fs::path src = step_dir(series.root(), step);
    const fs::path dst = step_dir(dst_root, step);
    std::error_code ec;
    fs::create_directories(dst, ec);
    if (!ec) fs::copy(src, dst, fs::copy_options::overwrite_existing | fs::copy_options::recursive, ec);
    if (ec) fail(ErrorKind::IoFailure, fmt::format("cannot copy '{}' to '{}': {}", src.string(), dst.string(), ec.message()));
}

}  // namespace trajex
