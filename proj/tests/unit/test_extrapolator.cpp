// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include <catch_amalgamated.hpp>

#include "test_support.hpp"
#include "trajex/error.hpp"
#include "trajex/extrapolator.hpp"

using namespace trajex;
using namespace trajex::test;

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

std::vector<double> unit(SplitMix64& rng, std::size_t d) {
    auto v = random_vector(rng, d);
    const double n = norm(v);
    for (auto& x : v) x /= n;
    return v;
}

// Component of a fresh Gaussian vector orthogonal to v, scaled to `size`.
std::vector<double> orthogonal_noise(SplitMix64& rng, const std::vector<double>& v, double size) {
    auto n = random_vector(rng, v.size());
    const double p = naive_dot(n, v);
    for (std::size_t i = 0; i < n.size(); ++i) n[i] -= p * v[i];
    const double s = size / norm(n);
    for (auto& x : n) x *= s;
    return n;
}

std::vector<double> axpy(double a, const std::vector<double>& x, const std::vector<double>& y) {
    std::vector<double> out(y);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += a * x[i];
    return out;
}

struct Planted {
    TrajectoryMatrix traj;
    std::vector<double> v;
};

Planted planted_line(SplitMix64& rng, std::size_t d, std::vector<std::int64_t> steps, double a, double b, double noise) {
    auto v = unit(rng, d);
    std::vector<std::vector<double>> rows;
    for (auto t : steps) {
        const double c = a * static_cast<double>(t) + b;
        auto row = axpy(c, v, std::vector<double>(d, 0.0));
        if (noise > 0) row = axpy(1.0, orthogonal_noise(rng, v, noise * std::abs(c)), row);
        rows.push_back(row);
    }
    return {TrajectoryMatrix("p", std::move(steps), std::move(rows)), v};
}

}  // namespace

TEST_CASE("fit_rank1 on an exact planted line") {
    SplitMix64 rng(1);
    const auto p = planted_line(rng, 16, {1, 2, 3}, 2.0, 1.0, 0.0);
    const auto model = fit_rank1(p.traj);
    CHECK(std::abs(naive_dot(model.v1, p.v)) == Catch::Approx(1.0).epsilon(1e-14));
    CHECK(model.fit.a == Catch::Approx(2.0).epsilon(1e-12));
    CHECK(model.fit.b == Catch::Approx(1.0).epsilon(1e-12));
    CHECK(model.fit.r_squared == Catch::Approx(1.0).margin(1e-14));
    CHECK(model.coefficients.size() == model.steps.size());
    CHECK(std::abs(norm(model.v1) - 1.0) <= 1e-10);
}

TEST_CASE("fit_rank1 with an alternating sign") {
    const std::vector<double> v = {0.0, 1.0};
    const TrajectoryMatrix traj("alt", {1, 2, 3, 4}, {{0, 1}, {0, -1}, {0, -1}, {0, 1}});
    const auto model = fit_rank1(traj);
    CHECK(model.fit.a == Catch::Approx(0.0).margin(1e-15));
    CHECK(model.coefficients.back() >= 0.0);
    CHECK(model.v1[1] == Catch::Approx(1.0));
}

TEST_CASE("fit_rank1 with 1% orthogonal noise") {
    SplitMix64 rng(2);
    for (int trial = 0; trial < 10; ++trial) {
        const auto p = planted_line(rng, 500, iota_steps(10, 10, 10), 0.7, 3.0, 0.01);
        const auto model = fit_rank1(p.traj);
        CHECK(std::abs(naive_dot(model.v1, p.v)) >= 0.999);
        CHECK(std::abs(model.fit.a - 0.7) <= 0.02 * 0.7);
    }
}

TEST_CASE("fit_rank1 errors") {
    const TrajectoryMatrix one("o", {1}, {{1, 2}});
    CHECK(kind_of([&] { fit_rank1(one); }) == ErrorKind::TooFewPoints);
    const TrajectoryMatrix zero("z", {1, 2}, {{0, 0}, {0, 0}});
    CHECK(kind_of([&] { fit_rank1(zero); }) == ErrorKind::ZeroTrajectory);
}

TEST_CASE("fit_rank1 from a moved decomposition matches the copy") {
    SplitMix64 rng(22);
    const auto p = planted_line(rng, 64, {2, 4, 6, 8}, 1.0, 0.5, 0.1);
    const auto dec = truncated_svd(p.traj, 1);
    const auto copied = fit_rank1("p", dec);
    auto moved_from = dec;
    const auto moved = fit_rank1("p", std::move(moved_from));
    CHECK(copied.v1 == moved.v1);
    CHECK(copied.coefficients == moved.coefficients);
    CHECK(copied.fit.a == moved.fit.a);
}

TEST_CASE("predict examples") {
    Rank1Model model;
    model.v1 = {1, 0, 0};
    model.fit.a = 2;
    model.fit.b = 0;
    CHECK(predict(model, std::vector<double>(3, 0.0), 10) == std::vector<double>{20, 0, 0});
    CHECK(kind_of([&] { predict(model, std::vector<double>(2, 0.0), 10); }) == ErrorKind::DimensionMismatch);

    SplitMix64 rng(3);
    const auto p = planted_line(rng, 40, {5, 10, 15, 20}, 0.3, -1.0, 0.0);
    const auto fitted = fit_rank1(p.traj);
    const auto base = random_vector(rng, 40);
    for (std::size_t i = 0; i < 4; ++i) {
        const auto recon = reconstruct_rank_r(p.traj, base, 1, i);
        const auto pred = predict(fitted, base, p.traj.steps()[i]);
        CHECK(max_rel_error(pred, recon) <= 1e-12);
        const auto stored = axpy(1.0, p.traj.load_row(i), base);
        CHECK(max_rel_error(pred, stored) <= 1e-9);
    }
    const auto far = predict(fitted, base, 40);
    CHECK(max_rel_error(far, axpy(0.3 * 40 - 1.0, p.v, base)) <= 1e-9);
}

TEST_CASE("sign convention does not change predictions") {
    SplitMix64 rng(4);
    const auto p = planted_line(rng, 33, {1, 2, 3, 4}, 1.5, 0.2, 0.05);
    const auto model = fit_rank1(p.traj);
    Rank1Model flipped = model;
    for (auto& x : flipped.v1) x = -x;
    for (auto& c : flipped.coefficients) c = -c;
    flipped.fit.a = -model.fit.a;
    flipped.fit.b = -model.fit.b;
    const auto base = random_vector(rng, 33);
    CHECK(predict(model, base, 9) == predict(flipped, base, 9));
}

TEST_CASE("rank-r reconstruction") {
    SplitMix64 rng(5);
    const auto rows = random_rows(rng, 4, 32);
    const TrajectoryMatrix traj("r", {1, 2, 3, 4}, rows);
    const auto base = random_vector(rng, 32);
    const auto full = truncated_svd(traj, 4);
    double previous = std::numeric_limits<double>::infinity();
    for (std::size_t r = 1; r <= 4; ++r) {
        long double err = 0.0L;
        for (std::size_t i = 0; i < 4; ++i) {
            const auto rec = reconstruct_rank_r(traj, base, r, i);
            const double e = distance(rec, axpy(1.0, rows[i], base));
            err += static_cast<long double>(e) * e;
        }
        if (r < 4) {
            long double tail = 0.0L;
            for (std::size_t k = r; k < 4; ++k) tail += static_cast<long double>(full.singular_values[k]) * full.singular_values[k];
            CHECK(rel_diff(static_cast<double>(err), static_cast<double>(tail)) <= 1e-8);
        } else {
            for (std::size_t i = 0; i < 4; ++i)
                CHECK(max_rel_error(reconstruct_rank_r(traj, base, 4, i), axpy(1.0, rows[i], base)) <= 1e-8);
        }
        CHECK(static_cast<double>(err) <= previous);
        previous = static_cast<double>(err);
    }
    CHECK(kind_of([&] { reconstruct_rank_r(traj, base, 5, 0); }) == ErrorKind::RankOutOfRange);
    CHECK(kind_of([&] { reconstruct_rank_r(traj, base, 1, 4); }) == ErrorKind::BadStepIndex);

    const auto exact = planted_line(rng, 20, {1, 2, 3}, 1.0, 0.0, 0.0);
    const auto zero = std::vector<double>(20, 0.0);
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(max_rel_error(reconstruct_rank_r(exact.traj, zero, 1, i), exact.traj.load_row(i)) <= 1e-10);
}

TEST_CASE("raw-space extrapolation") {
    SplitMix64 rng(6);
    const std::size_t d = 12;
    const auto slope = random_vector(rng, d), icpt = random_vector(rng, d);
    std::vector<std::vector<double>> rows;
    const std::vector<std::int64_t> steps = {3, 7, 8, 20};
    for (auto t : steps) {
        std::vector<double> r(d);
        for (std::size_t i = 0; i < d; ++i) r[i] = slope[i] * static_cast<double>(t) + icpt[i];
        rows.push_back(r);
    }
    const TrajectoryMatrix traj("x", steps, rows);
    const auto base = random_vector(rng, d);
    const auto out = extrapolate_raw(traj, base, 50);
    std::vector<double> expected(d);
    for (std::size_t i = 0; i < d; ++i) expected[i] = base[i] + slope[i] * 50 + icpt[i];
    CHECK(max_rel_error(out, expected) <= 1e-12);

    const auto p = planted_line(rng, 30, {1, 2, 3, 4}, 0.5, 0.5, 0.0);
    const auto zero = std::vector<double>(30, 0.0);
    CHECK(max_rel_error(extrapolate_raw(p.traj, zero, 9), predict(fit_rank1(p.traj), zero, 9)) <= 1e-9);
    CHECK(kind_of([&] { extrapolate_raw(TrajectoryMatrix("o", {1}, {{1.0}}), std::vector<double>{0.0}, 3); }) ==
          ErrorKind::TooFewPoints);
}

TEST_CASE("SVD space denoises relative to raw space") {
    SplitMix64 rng(7);
    double svd_err = 0.0, raw_err = 0.0;
    const int trials = 20;
    const auto steps = iota_steps(10, 10, 10);
    for (int trial = 0; trial < trials; ++trial) {
        const double a = 0.5 + std::abs(rng.normal()), b = rng.normal();
        const auto p = planted_line(rng, 300, steps, a, b, 0.2);
        const auto zero = std::vector<double>(300, 0.0);
        const auto truth = axpy(a * 200 + b, p.v, zero);
        svd_err += distance(predict(fit_rank1(p.traj), zero, 200), truth) / trials;
        raw_err += distance(extrapolate_raw(p.traj, zero, 200), truth) / trials;
    }
    CHECK(svd_err < raw_err);
}

TEST_CASE("extrapolate dispatches across the ablation axes") {
    SplitMix64 rng(8);
    const auto p = planted_line(rng, 50, iota_steps(6, 10, 10), 0.4, 2.0, 0.05);
    const auto base = random_vector(rng, 50);
    ExtrapolationConfig cfg;
    cfg.t_cut = 60;
    cfg.target_steps = {120};
    CHECK(extrapolate(p.traj, base, cfg, 120) == predict(fit_rank1(p.traj), base, 120));

    cfg.space = Space::Raw;
    CHECK(max_rel_error(extrapolate(p.traj, base, cfg, 120), extrapolate_raw(p.traj, base, 120)) <= 1e-12);

    cfg.space = Space::Svd;
    cfg.rank = 6;
    // Every component extrapolated linearly at full rank is the raw-space fit.
    CHECK(max_rel_error(extrapolate(p.traj, base, cfg, 120), extrapolate_raw(p.traj, base, 120)) <= 1e-9);

    cfg.rank = 2;
    cfg.fit = FitKind::Polynomial;
    const auto dec = truncated_svd(p.traj, 2);
    const auto coeffs = extrapolate_coefficients(dec, cfg, 120);
    std::vector<double> ts(p.traj.steps().begin(), p.traj.steps().end());
    for (std::size_t k = 0; k < 2; ++k) {
        const auto pf = poly_fit(ts, dec.coefficient_series(k), 3);
        CHECK(rel_diff(coeffs[k], pf.evaluate(120)) <= 1e-9);
    }
    auto expected = base;
    for (std::size_t k = 0; k < 2; ++k)
        for (std::size_t i = 0; i < 50; ++i) expected[i] += coeffs[k] * dec.right_vectors(k, i);
    CHECK(max_rel_error(extrapolate(p.traj, base, cfg, 120), expected) <= 1e-12);

    ExtrapolationConfig bad;
    bad.rank = 0;
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("evaluation weights reproduce the fitted value") {
    SplitMix64 rng(9);
    const std::vector<std::int64_t> steps = {2, 5, 6, 11, 14};
    const std::vector<double> ts = {2, 5, 6, 11, 14};
    const auto y = random_vector(rng, 5);
    const auto lw = evaluation_weights(steps, FitKind::Linear, 3, 30);
    CHECK(rel_diff(naive_dot(lw, y), linear_fit(ts, y).evaluate(30)) <= 1e-12);
    const auto pw = evaluation_weights(steps, FitKind::Polynomial, 3, 30);
    CHECK(rel_diff(naive_dot(pw, y), poly_fit(ts, y, 3).evaluate(30)) <= 1e-9);
}

TEST_CASE("ExPO examples") {
    CHECK(expo(std::vector<double>{0}, std::vector<double>{1}, 0.5) == std::vector<double>{1.5});
    const std::vector<double> base = {0.1, -3, 7}, cut = {0.3, 2, 5.5};
    CHECK(expo(base, cut, 0.0) == cut);
    CHECK(expo(base, cut, -1.0) == base);
    CHECK(kind_of([&] { expo(base, std::vector<double>{1}, 1.0); }) == ErrorKind::DimensionMismatch);
}

TEST_CASE("weight extrapolation examples") {
    CHECK(weight_extrapolate(std::vector<double>{1}, std::vector<double>{2}, 10, 20, 30) == std::vector<double>{3});
    const std::vector<double> a = {0.1, -3, 7}, b = {0.3, 2, 5.5};
    CHECK(weight_extrapolate(a, b, 10, 20, 20) == b);
    CHECK(weight_extrapolate(a, b, 10, 20, 10) == a);
    CHECK(kind_of([&] { weight_extrapolate(a, b, 10, 10, 20); }) == ErrorKind::DegenerateInterval);
    CHECK(kind_of([&] { weight_extrapolate(a, std::vector<double>{1}, 10, 20, 30); }) == ErrorKind::DimensionMismatch);
}

TEST_CASE("two-point baselines agree on a rank-1 line through the base") {
    SplitMix64 rng(10);
    const auto v = unit(rng, 25);
    const auto base = random_vector(rng, 25);
    const TrajectoryMatrix traj("two", {10, 20}, {axpy(10 * 0.3, v, std::vector<double>(25, 0.0)),
                                                 axpy(20 * 0.3, v, std::vector<double>(25, 0.0))});
    const auto relex = predict(fit_rank1(traj), base, 50);
    const auto raw = extrapolate_raw(traj, base, 50);
    const auto weight =
        weight_extrapolate(axpy(1.0, traj.load_row(0), base), axpy(1.0, traj.load_row(1), base), 10, 20, 50);
    CHECK(max_rel_error(relex, raw) <= 1e-9);
    CHECK(max_rel_error(relex, weight) <= 1e-9);
}

TEST_CASE("top singular triple by power iteration") {
    SplitMix64 rng(11);
    const auto rows = random_rows(rng, 6, 9);
    const auto m = to_matrix(rows);
    const auto triple = top_singular_triple(m.data(), 6, 9);
    const auto dec = truncated_svd(TrajectoryMatrix("m", iota_steps(6), rows), 1);
    CHECK(rel_diff(triple.sigma, dec.singular_values[0]) <= 1e-9);
    const auto row = dec.right_vectors.row(0);
    CHECK(std::abs(naive_dot(triple.v, std::vector<double>(row.begin(), row.end()))) >= 1 - 1e-8);
}

TEST_CASE("alpharl baseline") {
    TempDir dir;
    SplitMix64 rng(12);
    const std::size_t rows = 6, cols = 10;
    const auto u = unit(rng, rows), v = unit(rng, cols);
    const auto base = random_vector(rng, rows * cols);
    const std::vector<TensorSpec> schema = {{"m", {rows, cols}, DType::F32}, {"b", {cols}, DType::F32}};
    const auto steps = iota_steps(5, 0, 10);
    std::map<std::int64_t, std::vector<double>> stored;
    for (auto s : steps) {
        std::vector<double> w(base);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) w[i * cols + j] += 0.01 * static_cast<double>(s) * u[i] * v[j];
        std::vector<double> bias(cols);
        for (std::size_t j = 0; j < cols; ++j) bias[j] = 0.02 * static_cast<double>(s) * v[j];
        write_checkpoint(schema, {{"m", w}, {"b", bias}}, s, dir.path());
    }
    write_series_index(dir.path(), 0, std::vector<std::int64_t>(steps.begin() + 1, steps.end()), schema);
    const auto series = open_series(dir.path());
    const auto pred = alpharl_extrapolate(series, "m", 40);
    const auto truth = series.read_tensor(40, "m");
    const auto base_stored = series.read_tensor(0, "m");
    std::vector<double> dp(pred.size()), dt(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        dp[i] = pred[i] - base_stored[i];
        dt[i] = truth[i] - base_stored[i];
    }
    // f32 storage rounds the deltas, so the bound is relative to the delta.
    CHECK(distance(dp, dt) <= 1e-5 * norm(dt));
    const auto bias_pred = alpharl_extrapolate(series, "b", 40, 80);
    CHECK(bias_pred.size() == cols);
    CHECK(kind_of([&] { alpharl_extrapolate(series, "m", 10); }) == ErrorKind::TooFewPoints);
}

TEST_CASE("alpharl rejects tensors with more than two dimensions") {
    TempDir dir;
    const std::vector<TensorSpec> schema = {{"c", {2, 2, 2}, DType::F32}};
    for (int s = 0; s < 3; ++s) write_checkpoint(schema, {{"c", std::vector<double>(8, s)}}, s, dir.path());
    write_series_index(dir.path(), 0, {1, 2}, schema);
    CHECK(kind_of([&] { alpharl_extrapolate(open_series(dir.path()), "c", 2); }) == ErrorKind::NotAMatrix);
}

TEST_CASE("alpharl is worse than the rank-1 trajectory model under rotating noise") {
    TempDir dir;
    SplitMix64 rng(13);
    const std::size_t rows = 12, cols = 16, d = rows * cols;
    const auto u = unit(rng, rows), v = unit(rng, cols);
    std::vector<double> dir_v(d);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) dir_v[i * cols + j] = u[i] * v[j];
    const std::vector<TensorSpec> schema = {{"m", {rows, cols}, DType::F32}};
    const auto steps = iota_steps(11, 0, 10);
    for (auto s : steps) {
        auto w = axpy(0.05 * static_cast<double>(s), dir_v, std::vector<double>(d, 0.0));
        if (s > 0) {
            // A rank-1 perturbation in a fresh direction each step.
            const auto x = unit(rng, rows), y = unit(rng, cols);
            std::vector<double> n(d);
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < cols; ++j) n[i * cols + j] = x[i] * y[j];
            const double proj = naive_dot(n, dir_v);
            n = axpy(-proj, dir_v, n);
            const double scale = 0.3 * 0.05 * static_cast<double>(s) / norm(n);
            w = axpy(scale, n, w);
        }
        write_checkpoint(schema, {{"m", w}}, s, dir.path());
    }
    write_series_index(dir.path(), 0, std::vector<std::int64_t>(steps.begin() + 1, steps.end()), schema);
    const auto series = open_series(dir.path());
    const auto truth = axpy(0.05 * 200, dir_v, std::vector<double>(d, 0.0));
    const auto base = series.read_tensor(0, "m");
    const auto relex = predict(fit_rank1(build_trajectory(series, "m", 100)), base, 200);
    const auto alpharl = alpharl_extrapolate(series, "m", 100, 200);
    CHECK(distance(alpharl, truth) > distance(relex, truth));
}

TEST_CASE("model persistence round trip") {
    TempDir dir;
    SplitMix64 rng(14);
    const auto p = planted_line(rng, 77, {3, 6, 9}, 0.25, 1.0, 0.1);
    auto model = fit_rank1(p.traj);
    model.tensor_name = "layers.0.w";
    save_model(model, dir.path());
    CHECK(std::filesystem::exists(dir / "layers.0.w.r1m"));
    CHECK(std::filesystem::exists(dir / "layers.0.w.json"));
    const auto back = load_model(dir.path(), "layers.0.w");
    CHECK(back.v1 == model.v1);
    CHECK(back.steps == model.steps);
    CHECK(back.coefficients == model.coefficients);
    CHECK(back.fit.a == model.fit.a);
    CHECK(back.fit.b == model.fit.b);
    CHECK(back.fit.r_squared == model.fit.r_squared);
    CHECK(back.sigma1 == model.sigma1);
    const auto zero = std::vector<double>(77, 0.0);
    CHECK(predict(back, zero, 30) == predict(model, zero, 30));
    CHECK_THROWS_AS(load_model(dir.path(), "missing"), Error);
}
