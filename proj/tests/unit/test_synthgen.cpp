// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <fstream>

#include <catch_amalgamated.hpp>
#include <nlohmann/json.hpp>

#include "test_support.hpp"
#include "trajex/diagnostics.hpp"
#include "trajex/error.hpp"
#include "trajex/extrapolator.hpp"
#include "trajex/synthgen.hpp"

using namespace trajex;
using namespace trajex::test;
using nlohmann::json;

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

PlantConfig small_plant() {
    PlantConfig cfg;
    cfg.t_values = {2, 4, 6, 8, 10};
    cfg.tensors = {{"w", {6, 1500}, 0.05, 0.2, 0.0}, {"b", {37}, -0.1, 0.0, 0.0}};
    cfg.base_scale = 1.0;
    cfg.direction_seed = 11;
    cfg.rng_seed = 12;
    return cfg;
}

double frob(const Matrix& m) {
    long double s = 0.0L;
    for (double x : m.data()) s += static_cast<long double>(x) * x;
    return std::sqrt(static_cast<double>(s));
}

}  // namespace

TEST_CASE("Jacobi oracle on diagonal inputs") {
    const auto id = jacobi_svd_oracle(Matrix::identity(3));
    CHECK(id.singular_values == std::vector<double>{1, 1, 1});

    Matrix d(3, 3);
    d(0, 0) = 5;
    d(1, 1) = 3;
    const auto s = jacobi_svd_oracle(d);
    CHECK(s.singular_values[0] == 5.0);
    CHECK(s.singular_values[1] == 3.0);
    CHECK(s.singular_values[2] == 0.0);
    CHECK(std::abs(s.v(0, 0)) == 1.0);
    CHECK(std::abs(s.v(1, 1)) == 1.0);
}

TEST_CASE("Jacobi oracle reproduces the Gram spectrum") {
    SplitMix64 rng(3);
    const auto rows = random_rows(rng, 6, 20);
    const Matrix m = to_matrix(rows);
    const auto svd = jacobi_svd_oracle(m);

    Matrix g(6, 6);
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 6; ++j) g(i, j) = naive_dot(rows[i], rows[j]);
    // (sigma_k^2, u_k) must be an eigenpair of the naive Gram matrix.
    for (std::size_t k = 0; k < 6; ++k) {
        const double lambda = svd.singular_values[k] * svd.singular_values[k];
        for (std::size_t i = 0; i < 6; ++i) {
            long double gu = 0.0L;
            for (std::size_t j = 0; j < 6; ++j) gu += static_cast<long double>(g(i, j)) * svd.u(j, k);
            CHECK(std::abs(static_cast<double>(gu) - lambda * svd.u(i, k)) <= 1e-10 * frob(g));
        }
    }
    long double trace = 0.0L, sum = 0.0L;
    for (std::size_t i = 0; i < 6; ++i) {
        trace += g(i, i);
        sum += static_cast<long double>(svd.singular_values[i]) * svd.singular_values[i];
    }
    CHECK(rel_diff(static_cast<double>(sum), static_cast<double>(trace)) <= 1e-10);

    Matrix diff(6, 20);
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 20; ++j) {
            long double a = 0.0L;
            for (std::size_t k = 0; k < 6; ++k) a += static_cast<long double>(svd.u(i, k)) * svd.singular_values[k] * svd.v(k, j);
            diff(i, j) = m(i, j) - static_cast<double>(a);
        }
    CHECK(frob(diff) <= 1e-10 * frob(m));
}

TEST_CASE("Jacobi oracle size limits") {
    CHECK(kind_of([] { jacobi_svd_oracle(Matrix(65, 4)); }) == ErrorKind::SizeExceeded);
    CHECK(kind_of([] { jacobi_svd_oracle(Matrix(4, 4097)); }) == ErrorKind::SizeExceeded);
}

TEST_CASE("exact plants are stored up to one narrowing") {
    TempDir dir;
    const auto cfg = small_plant();
    plant_series(cfg, dir.path());
    const auto series = open_series(dir.path(), true);
    CHECK(series.observed_steps() == cfg.t_values);
    for (std::size_t i = 0; i < cfg.tensors.size(); ++i) {
        const auto planted = plant_tensor(cfg, i);
        const auto traj = build_trajectory(series, cfg.tensors[i].name, 10);
        for (std::size_t t = 0; t < traj.rows(); ++t) {
            const auto row = traj.load_row(t);
            const auto& clean = planted.clean_deltas[t];
            for (std::size_t e = 0; e < row.size(); ++e) {
                const double stored = narrow(planted.base[e] + clean[e], DType::F32) - narrow(planted.base[e], DType::F32);
                CHECK(row[e] == stored);
            }
            const double c = cfg.tensors[i].slope * static_cast<double>(cfg.t_values[t]) + cfg.tensors[i].intercept;
            const auto analytic = analytic_delta(cfg, i, cfg.t_values[t]);
            for (std::size_t e = 0; e < row.size(); ++e) CHECK(analytic[e] == c * planted.direction[e]);
            CHECK(distance(row, clean) <= 1e-6 * (norm(clean) + norm(planted.base)));
        }
        CHECK(std::abs(norm(planted.direction) - 1.0) <= 1e-12);
    }
}

TEST_CASE("planting is deterministic and independent of the worker count") {
    TempDir dir;
    auto cfg = small_plant();
    cfg.noise_kind = NoiseKind::FullIid;
    cfg.noise_scale = 0.1;
    cfg.tensors.push_back({"c", {3, 3}, 0.3, 0.0, 0.4});
    plant_series(cfg, dir / "a", 1);
    plant_series(cfg, dir / "b", 1);
    plant_series(cfg, dir / "c", 3);
    CHECK(same_tree(dir / "a", dir / "b", {}));
    CHECK(same_tree(dir / "a", dir / "c", {}));

    auto other = cfg;
    other.rng_seed = 13;
    plant_series(other, dir / "d");
    CHECK_FALSE(same_tree(dir / "a", dir / "d", {}));
}

TEST_CASE("regenerated slabs match the in-memory plant") {
    TempDir dir;
    PlantConfig cfg;
    cfg.t_values = {1, 2, 3};
    cfg.tensors = {{"big", {3 * 4096 * 16 + 321}, 0.01, 0.0, 0.3}};
    cfg.noise_kind = NoiseKind::OrthogonalIid;
    cfg.noise_scale = 0.2;
    cfg.base_scale = 0.1;
    plant_series(cfg, dir.path());
    const auto series = open_series(dir.path());
    const auto planted = plant_tensor(cfg, 0);
    const auto stored = series.read_tensor(3, "big");
    for (std::size_t e = 0; e < stored.size(); ++e)
        CHECK(stored[e] == narrow(planted.base[e] + planted.deltas[2][e], DType::F32));
}

TEST_CASE("noise kinds have their documented structure") {
    auto cfg = small_plant();
    cfg.tensors = {{"w", {40, 50}, 0.5, 1.0, 0.0}};

    SECTION("orthogonal_iid leaves the coefficient untouched") {
        cfg.noise_kind = NoiseKind::OrthogonalIid;
        cfg.noise_scale = 0.3;
        const auto p = plant_tensor(cfg, 0);
        for (std::size_t t = 0; t < p.deltas.size(); ++t) {
            std::vector<double> n(p.deltas[t].size());
            for (std::size_t e = 0; e < n.size(); ++e) n[e] = p.deltas[t][e] - p.clean_deltas[t][e];
            CHECK(std::abs(naive_dot(n, p.direction)) <= 1e-12 * norm(n));
            CHECK(norm(n) > 0.0);
        }
    }
    SECTION("full_iid energy matches the requested relative scale") {
        cfg.noise_kind = NoiseKind::FullIid;
        cfg.noise_scale = 0.5;
        const auto p = plant_tensor(cfg, 0);
        const auto truth = plant_ground_truth(cfg).tensors[0];
        long double noise = 0.0L, signal = 0.0L;
        for (std::size_t t = 0; t < p.deltas.size(); ++t)
            for (std::size_t e = 0; e < p.deltas[t].size(); ++e) {
                const long double n = p.deltas[t][e] - p.clean_deltas[t][e];
                noise += n * n;
                signal += static_cast<long double>(p.clean_deltas[t][e]) * p.clean_deltas[t][e];
            }
        CHECK(rel_diff(static_cast<double>(signal), truth.signal_energy) <= 1e-12);
        CHECK(static_cast<double>(noise / signal) == Catch::Approx(0.25).epsilon(0.05));
    }
    SECTION("extra components are orthonormal to the direction") {
        cfg.noise_kind = NoiseKind::ExtraComponents;
        cfg.extra_components = 3;
        cfg.noise_scale = 0.4;
        const auto p = plant_tensor(cfg, 0);
        REQUIRE(p.extra_directions.size() == 3);
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(std::abs(naive_dot(p.extra_directions[i], p.direction)) <= 1e-12);
            CHECK(std::abs(norm(p.extra_directions[i]) - 1.0) <= 1e-12);
            for (std::size_t j = i + 1; j < 3; ++j)
                CHECK(std::abs(naive_dot(p.extra_directions[i], p.extra_directions[j])) <= 1e-12);
        }
        long double noise = 0.0L;
        for (std::size_t t = 0; t < p.deltas.size(); ++t)
            for (std::size_t e = 0; e < p.deltas[t].size(); ++e) {
                const long double n = p.deltas[t][e] - p.clean_deltas[t][e];
                noise += n * n;
            }
        const auto truth = plant_ground_truth(cfg).tensors[0];
        CHECK(rel_diff(static_cast<double>(noise), truth.noise_energy) <= 1e-10);
        CHECK(rel_diff(truth.noise_energy, 0.16 * truth.signal_energy) <= 1e-10);
    }
}

TEST_CASE("extra components at 20% energy") {
    PlantConfig cfg;
    for (int t = 1; t <= 20; ++t) cfg.t_values.push_back(10 * t);
    cfg.tensors = {{"w", {64, 64}, 0.02, 0.0, 0.0}};
    cfg.noise_kind = NoiseKind::ExtraComponents;
    cfg.extra_components = 4;
    cfg.noise_scale = std::sqrt(0.2);
    const auto p = plant_tensor(cfg, 0);
    const TrajectoryMatrix traj("w", cfg.t_values, p.deltas);
    const auto dec = truncated_svd(traj, 5);
    const auto ev = explained_variance(dec);
    CHECK(ev[0] > 0.6);
    CHECK(ev[0] < 0.95);
    for (std::size_t k = 1; k < 5; ++k) {
        const auto c = dec.coefficient_series(k);
        bool up = false, down = false;
        for (std::size_t t = 1; t < c.size(); ++t) {
            up = up || c[t] > c[t - 1];
            down = down || c[t] < c[t - 1];
        }
        CHECK((up && down));
    }
}

TEST_CASE("planted recovery without noise") {
    auto cfg = small_plant();
    for (std::size_t i = 0; i < cfg.tensors.size(); ++i) {
        const auto p = plant_tensor(cfg, i);
        const auto model = fit_rank1(TrajectoryMatrix("p", cfg.t_values, p.deltas));
        const double sign = naive_dot(model.v1, p.direction) >= 0 ? 1.0 : -1.0;
        CHECK(std::abs(naive_dot(model.v1, p.direction)) >= 1 - 1e-10);
        CHECK(rel_diff(sign * model.fit.a, cfg.tensors[i].slope) <= 1e-9);
        if (cfg.tensors[i].intercept != 0.0) CHECK(rel_diff(sign * model.fit.b, cfg.tensors[i].intercept) <= 1e-9);
    }
}

TEST_CASE("direction recovery degrades with noise") {
    auto cfg = small_plant();
    cfg.tensors = {{"w", {30, 40}, 0.1, 0.5, 0.0}};
    cfg.noise_kind = NoiseKind::OrthogonalIid;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        cfg.rng_seed = seed;
        double previous = -1.0;
        for (double s : {0.0, 0.01, 0.1, 1.0}) {
            cfg.noise_scale = s;
            const auto p = plant_tensor(cfg, 0);
            const auto model = fit_rank1(TrajectoryMatrix("w", cfg.t_values, p.deltas));
            const double err = 1.0 - std::abs(naive_dot(model.v1, p.direction));
            CHECK(err >= previous);
            previous = err;
        }
    }
}

TEST_CASE("ground truth accounting") {
    TempDir dir;
    auto cfg = small_plant();
    cfg.tensors = {{"a", {16}, 1.0, 0.0, 0.0}, {"b", {16}, 1.0, 0.0, 0.1}, {"c", {16}, 1.0, 0.0, 1.0}};
    const auto truth = plant_series(cfg, dir.path());
    CHECK(truth.tensors[0].expected_r2 == 1.0);
    CHECK(truth.tensors[1].expected_r2 == Catch::Approx(1.0 / 1.01));
    CHECK(truth.tensors[2].expected_r2 == Catch::Approx(0.5));
    CHECK(truth.expected_fraction_above(0.98) == Catch::Approx(2.0 / 3.0));
    for (const auto& t : truth.tensors) {
        for (std::size_t i = 0; i < cfg.t_values.size(); ++i)
            CHECK(t.coefficients[i] == t.slope * static_cast<double>(cfg.t_values[i]) + t.intercept + t.epsilon[i]);
    }
    std::ifstream in(dir / "ground_truth.json");
    const auto doc = json::parse(in);
    CHECK(doc["tensors"].size() == 3);
    CHECK(doc["noise_kind"] == "none");
    CHECK(doc["expected_fraction_above"].get<double>() == Catch::Approx(2.0 / 3.0));
    const auto again = plant_ground_truth(cfg);
    CHECK(again.tensors[2].epsilon == truth.tensors[2].epsilon);
}

TEST_CASE("plant config JSON") {
    const json doc = {{"t_values", {5, 10}},
                      {"dtype", "bf16"},
                      {"noise_kind", "orthogonal_iid"},
                      {"noise_scale", 0.1},
                      {"tensors", {{{"name", "x"}, {"shape", {2, 3}}, {"slope", 0.5}}}}};
    const auto cfg = plant_config_from_json(doc);
    CHECK(cfg.dtype == DType::BF16);
    CHECK(cfg.noise_kind == NoiseKind::OrthogonalIid);
    CHECK(cfg.tensors[0].slope == 0.5);
    CHECK(cfg.tensors[0].intercept == 0.0);
    CHECK(cfg.rng_seed == 1);
    const auto back = plant_config_from_json(plant_config_to_json(cfg));
    CHECK(plant_config_to_json(back) == plant_config_to_json(cfg));

    auto with = [&](const std::function<void(json&)>& edit) {
        json d = doc;
        edit(d);
        return kind_of([&] { plant_config_from_json(d); });
    };
    CHECK(with([](json& d) { d.erase("t_values"); }) == ErrorKind::BadConfig);
    CHECK(with([](json& d) { d["t_values"] = {10, 5}; }) == ErrorKind::BadConfig);
    CHECK(with([](json& d) { d["noise_scale"] = -1; }) == ErrorKind::BadConfig);
    CHECK(with([](json& d) { d["noise_kind"] = "pink"; }) == ErrorKind::BadConfig);
    CHECK(with([](json& d) { d["dtype"] = "int8"; }) == ErrorKind::BadConfig);
    CHECK(with([](json& d) { d["tensors"] = json::array(); }) == ErrorKind::BadConfig);
    CHECK(with([](json& d) { d["tensors"][0]["shape"] = {0, 3}; }) == ErrorKind::BadConfig);
    CHECK(with([](json& d) { d["tensors"][0]["name"] = "a/b"; }) == ErrorKind::BadConfig);
    CHECK(with([](json& d) { d["noise_kind"] = "extra_components"; }) == ErrorKind::BadConfig);
    CHECK(with([](json& d) { d["t_values"] = "soon"; }) == ErrorKind::BadConfig);

    TempDir dir;
    std::ofstream(dir / "bad.json") << "{not json";
    CHECK(kind_of([&] { load_plant_config(dir / "bad.json"); }) == ErrorKind::BadConfig);
    CHECK(kind_of([&] { load_plant_config(dir / "missing.json"); }) == ErrorKind::BadConfig);
}

TEST_CASE("noise kind names") {
    for (auto k : {NoiseKind::None, NoiseKind::OrthogonalIid, NoiseKind::FullIid, NoiseKind::ExtraComponents})
        CHECK(parse_noise_kind(noise_kind_name(k)) == k);
}
