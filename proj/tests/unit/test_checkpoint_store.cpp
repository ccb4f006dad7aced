// SPDX-License-Identifier: Apache-2.0

#include <cstring>
#include <fstream>
#include <map>

#include <catch_amalgamated.hpp>
#include <nlohmann/json.hpp>

#include "test_support.hpp"
#include "trajex/checkpoint_store.hpp"
#include "trajex/error.hpp"

using namespace trajex;
using trajex::test::TempDir;
namespace fs = std::filesystem;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected a trajex::Error");
    return ErrorKind::InvalidArgument;
}

std::vector<TensorSpec> simple_schema(DType dtype = DType::F32) {
    return {{"layers.0.q_proj", {2, 2}, dtype}, {"bias", {3}, dtype}};
}

void write_simple_series(const fs::path& root, const std::vector<std::int64_t>& steps, DType dtype = DType::F32) {
    const auto schema = simple_schema(dtype);
    for (auto s : steps) {
        const double x = static_cast<double>(s);
        write_checkpoint(schema, {{"layers.0.q_proj", {x, x + 1, x + 2, x + 3}}, {"bias", {-x, 0.5, x}}}, s, root);
    }
    write_series_index(root, steps.front(), std::vector<std::int64_t>(steps.begin() + 1, steps.end()), schema);
}

void flip_bit(const fs::path& path, std::size_t byte, int bit) {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekg(static_cast<std::streamoff>(byte));
    char c = 0;
    f.read(&c, 1);
    c = static_cast<char>(c ^ (1 << bit));
    f.seekp(static_cast<std::streamoff>(byte));
    f.write(&c, 1);
}

}  // namespace

TEST_CASE("crc32c check value") {
    const char* text = "123456789";
    CHECK(crc32c(std::as_bytes(std::span(text, 9))) == 0xE3069283u);
    Crc32c inc;
    inc.update(std::as_bytes(std::span(text, 4)));
    inc.update(std::as_bytes(std::span(text + 4, 5)));
    CHECK(inc.value() == 0xE3069283u);
}

TEST_CASE("element_count is the product of the shape") {
    CHECK(TensorSpec{"a", {2, 3, 4}, DType::F32}.element_count() == 24);
    CHECK(TensorSpec{"s", {}, DType::F32}.element_count() == 1);
}

TEST_CASE("open_series reads a well-formed series") {
    TempDir dir;
    write_simple_series(dir.path(), {0, 10, 20});
    const CheckpointSeries series = open_series(dir.path(), true);
    CHECK(series.base().step == 0);
    CHECK(series.observed_steps() == std::vector<std::int64_t>{10, 20});
    CHECK(series.schema().size() == 2);
    CHECK(series.read_tensor(10, "layers.0.q_proj") == std::vector<double>{10, 11, 12, 13});
    CHECK(series.read_tensor(0, "bias") == std::vector<double>{0, 0.5, 0});
    CHECK(series.has_step(20));
    CHECK_FALSE(series.has_step(15));
}

TEST_CASE("read_tensor flattens row-major and widens") {
    TempDir dir;
    const std::vector<TensorSpec> f32 = {{"m", {2, 2}, DType::F32}};
    write_checkpoint(f32, {{"m", {1, 2, 3, 4}}}, 0, dir.path());
    write_checkpoint(f32, {{"m", {1.0 / 3.0, 2, 3, 4}}}, 1, dir.path());
    write_series_index(dir.path(), 0, {1}, f32);
    const auto series = open_series(dir.path());
    CHECK(series.read_tensor(0, "m") == std::vector<double>{1.0, 2.0, 3.0, 4.0});
    CHECK(series.read_tensor(1, "m")[0] == static_cast<double>(static_cast<float>(1.0 / 3.0)));
    CHECK(series.read_tensor(1, "m")[0] != 1.0 / 3.0);

    TempDir half;
    const std::vector<TensorSpec> f16 = {{"h", {1}, DType::F16}};
    write_checkpoint(f16, {{"h", {1.5}}}, 0, half.path());
    write_checkpoint(f16, {{"h", {1.5}}}, 1, half.path());
    write_series_index(half.path(), 0, {1}, f16);
    CHECK(open_series(half.path()).read_tensor(0, "h")[0] == 1.5);

    TempDir bf;
    const std::vector<TensorSpec> b16 = {{"z", {8}, DType::BF16}};
    write_checkpoint(b16, {{"z", std::vector<double>(8, 0.0)}}, 0, bf.path());
    write_checkpoint(b16, {{"z", std::vector<double>(8, 0.0)}}, 1, bf.path());
    write_series_index(bf.path(), 0, {1}, b16);
    CHECK(open_series(bf.path()).read_tensor(0, "z") == std::vector<double>(8, 0.0));
    CHECK(fs::file_size(bf.path() / "step_0" / "z.bin") == 16);
}

TEST_CASE("write_checkpoint rejects mismatched lengths") {
    TempDir dir;
    const std::vector<TensorSpec> schema = {{"m", {2, 2}, DType::F32}};
    CHECK(kind_of([&] { write_checkpoint(schema, {{"m", {1, 2, 3}}}, 0, dir.path()); }) == ErrorKind::ShapeMismatch);
    CHECK(kind_of([&] { write_checkpoint(schema, {}, 0, dir.path()); }) == ErrorKind::ShapeMismatch);
}

TEST_CASE("open_series error cases") {
    SECTION("missing index") {
        TempDir dir;
        CHECK(kind_of([&] { open_series(dir.path()); }) == ErrorKind::MissingIndex);
    }
    SECTION("a step lacks a tensor") {
        TempDir dir;
        write_simple_series(dir.path(), {0, 10, 20});
        const std::vector<TensorSpec> partial = {{"bias", {3}, DType::F32}};
        fs::remove_all(dir.path() / "step_20");
        write_checkpoint(partial, {{"bias", {1, 2, 3}}}, 20, dir.path());
        CHECK(kind_of([&] { open_series(dir.path()); }) == ErrorKind::SchemaMismatch);
    }
    SECTION("a step has a different dtype") {
        TempDir dir;
        write_simple_series(dir.path(), {0, 10});
        fs::remove_all(dir.path() / "step_10");
        write_checkpoint(simple_schema(DType::BF16),
                         {{"layers.0.q_proj", {1, 2, 3, 4}}, {"bias", {1, 2, 3}}}, 10, dir.path());
        CHECK(kind_of([&] { open_series(dir.path()); }) == ErrorKind::SchemaMismatch);
    }
    SECTION("non-increasing steps") {
        TempDir dir;
        write_simple_series(dir.path(), {0, 10});
        write_series_index(dir.path(), 0, {10, 10}, simple_schema());
        CHECK(kind_of([&] { open_series(dir.path()); }) == ErrorKind::InvalidArgument);
    }
    SECTION("observed step not after base") {
        TempDir dir;
        write_simple_series(dir.path(), {0, 10});
        write_series_index(dir.path(), 10, {0}, simple_schema());
        CHECK(kind_of([&] { open_series(dir.path()); }) == ErrorKind::InvalidArgument);
    }
    SECTION("truncated blob") {
        TempDir dir;
        write_simple_series(dir.path(), {0, 10});
        fs::resize_file(dir.path() / "step_10" / "bias.bin", 8);
        CHECK(kind_of([&] { open_series(dir.path()); }) == ErrorKind::CorruptBlob);
    }
}

TEST_CASE("unknown steps and tensors") {
    TempDir dir;
    write_simple_series(dir.path(), {0, 10});
    const auto series = open_series(dir.path());
    CHECK(kind_of([&] { series.read_tensor(5, "bias"); }) == ErrorKind::UnknownStep);
    CHECK(kind_of([&] { series.read_tensor(10, "nope"); }) == ErrorKind::UnknownTensor);
}

TEST_CASE("single-bit corruption is detected") {
    TempDir dir;
    write_simple_series(dir.path(), {0, 10});
    flip_bit(dir.path() / "step_10" / "layers.0.q_proj.bin", 5, 3);
    const auto series = open_series(dir.path());
    CHECK(kind_of([&] { series.read_tensor(10, "layers.0.q_proj"); }) == ErrorKind::CorruptBlob);
    CHECK(kind_of([&] { open_series(dir.path(), true); }) == ErrorKind::CorruptBlob);
    CHECK(series.read_tensor(10, "bias").size() == 3);
}

TEST_CASE("manifest and index layout") {
    TempDir dir;
    write_simple_series(dir.path(), {0, 10});
    std::ifstream in(dir.path() / "step_10" / "manifest.json");
    const auto manifest = nlohmann::json::parse(in);
    CHECK(manifest["step"] == 10);
    CHECK(manifest["format_version"] == 1);
    CHECK(manifest["tensors"][0]["name"] == "layers.0.q_proj");
    CHECK(manifest["tensors"][0]["dtype"] == "f32");
    const auto bytes = trajex::test::read_file(dir.path() / "step_10" / "layers.0.q_proj.bin");
    CHECK(manifest["tensors"][0]["crc32c"].get<std::uint32_t>() == crc32c(std::as_bytes(std::span(bytes))));
    std::ifstream idx(dir.path() / "series.json");
    const auto index = nlohmann::json::parse(idx);
    CHECK(index["base_step"] == 0);
    CHECK(index["observed_steps"] == nlohmann::json::array({10}));
    CHECK(index["tensor_schema"][1]["shape"] == nlohmann::json::array({3}));
}

TEST_CASE("write-read-write is byte stable after the first narrowing") {
    SplitMix64 rng(21);
    for (auto dtype : {DType::F32, DType::F16, DType::BF16}) {
        TempDir dir;
        const std::vector<TensorSpec> schema = {{"w", {7, 5}, dtype}};
        std::vector<double> x = trajex::test::random_vector(rng, 35);
        write_checkpoint(schema, {{"w", x}}, 0, dir / "a");
        write_series_index(dir / "a", 0, {}, schema);
        const auto once = open_series(dir / "a").read_tensor(0, "w");
        write_checkpoint(schema, {{"w", once}}, 0, dir / "b");
        write_series_index(dir / "b", 0, {}, schema);
        const auto twice = open_series(dir / "b").read_tensor(0, "w");
        CHECK(once == twice);
        CHECK(trajex::test::read_file(dir / "a" / "step_0" / "w.bin") ==
              trajex::test::read_file(dir / "b" / "step_0" / "w.bin"));
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(once[i] == narrow(x[i], dtype));
    }
}

TEST_CASE("streaming reader and writer") {
    TempDir dir;
    const TensorSpec spec{"big", {70000}, DType::F32};
    BlobWriter writer(dir / "big.bin", spec);
    std::vector<double> values(70000);
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<double>(i) * 0.25;
    writer.append(std::span<const double>(values).first(1000));
    writer.append(std::span<const double>(values).subspan(1000));
    const std::uint32_t crc = writer.finish();

    BlobReader reader(dir / "big.bin", spec, crc);
    std::vector<double> back(70000);
    reader.read(std::span<double>(back).first(4096));
    reader.read(std::span<double>(back).subspan(4096));
    CHECK(back == values);

    BlobReader bad(dir / "big.bin", spec, crc ^ 1u);
    CHECK(kind_of([&] { bad.read(back); }) == ErrorKind::CorruptBlob);

    BlobWriter short_writer(dir / "short.bin", spec);
    short_writer.append(std::span<const double>(values).first(10));
    CHECK(kind_of([&] { short_writer.finish(); }) == ErrorKind::ShapeMismatch);
}

TEST_CASE("tensor name validation") {
    TempDir dir;
    for (const char* name : {"", "a/b", ".hidden"}) {
        const std::vector<TensorSpec> schema = {{name, {1}, DType::F32}};
        CHECK(kind_of([&] { write_series_index(dir.path(), 0, {1}, schema); }) == ErrorKind::InvalidArgument);
    }
}

TEST_CASE("copy_checkpoint duplicates a step") {
    TempDir dir;
    write_simple_series(dir / "src", {0, 10});
    const auto series = open_series(dir / "src");
    copy_checkpoint(series, 0, dir / "dst");
    write_series_index(dir / "dst", 0, {}, series.schema());
    CHECK(open_series(dir / "dst", true).read_tensor(0, "layers.0.q_proj") == series.read_tensor(0, "layers.0.q_proj"));
}
