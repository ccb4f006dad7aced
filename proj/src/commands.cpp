// SPDX-License-Identifier: Apache-2.0

#include "trajex/commands.hpp"

#include <sys/resource.h>

#include <algorithm>
#include <fstream>
#include <functional>
#include <memory>
#include <set>

#include <fmt/core.h>

#include "trajex/checkpoint_store.hpp"
#include "trajex/parallel.hpp"
#include "trajex/spectral.hpp"
#include "trajex/trajectory.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace trajex {

namespace {

constexpr std::size_t kStreamChunk = 16 * kBlockElements;

void write_json_file(const fs::path& path, const json& doc) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorKind::IoFailure, fmt::format("cannot write '{}'", path.string()));
    out << doc.dump(2) << '\n';
    if (!out) fail(ErrorKind::IoFailure, fmt::format("write failed for '{}'", path.string()));
}

void ensure_dir(const fs::path& dir) {
    if (dir.empty()) fail(ErrorKind::InvalidArgument, "--out is required");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) fail(ErrorKind::IoFailure, fmt::format("cannot create '{}': {}", dir.string(), ec.message()));
}

CheckpointSeries open_input(const fs::path& path, bool verify) {
    if (path.empty()) fail(ErrorKind::InvalidArgument, "--series is required");
    return open_series(path, verify);
}

std::vector<TensorSpec> sorted_schema(const CheckpointSeries& series) {
    std::vector<TensorSpec> specs = series.schema();
    std::sort(specs.begin(), specs.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
    return specs;
}

std::int64_t resolve_t_cut(const CheckpointSeries& series, const CommandOptions& options) {
    if (options.t_cut) return *options.t_cut;
    if (series.observed().empty()) fail(ErrorKind::EmptyWindow, "series has no observed steps");
    return series.observed().back().step;
}

std::size_t window_size(const CheckpointSeries& series, std::int64_t t_cut) {
    std::size_t n = 0;
    for (auto step : series.observed_steps()) {
        if (step <= t_cut) ++n;
    }
    return n;
}

/// Runs `fn` and re-labels any failure with the tensor it came from.
template <typename Fn>
void for_tensor(const std::string& name, Fn&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        if (e.message().find(fmt::format("'{}'", name)) != std::string::npos) throw;
        fail(e.kind(), fmt::format("tensor '{}': {}", name, e.message()));
    }
}

double median(std::vector<double> xs) {
    std::sort(xs.begin(), xs.end());
    const std::size_t n = xs.size();
    return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

json r2_distribution(const std::vector<double>& r2, double threshold) {
    if (r2.empty()) return json{{"count", 0}};
    double sum = 0.0;
    std::size_t above = 0;
    for (double x : r2) {
        sum += x;
        if (x > threshold) ++above;
    }
    return json{{"count", r2.size()},
                {"min", *std::min_element(r2.begin(), r2.end())},
                {"median", median(r2)},
                {"max", *std::max_element(r2.begin(), r2.end())},
                {"mean", sum / static_cast<double>(r2.size())},
                {"threshold", threshold},
                {"fraction_above", static_cast<double>(above) / static_cast<double>(r2.size())}};
}

// --- extrapolation core ---------------------------------------------------------

/// Per-tensor Gram matrices over the longest window of a sweep.
using GramCache = std::map<std::string, Matrix, std::less<>>;

struct TargetWriters {
    std::vector<std::int64_t> targets;
    std::vector<std::unique_ptr<CheckpointWriter>> writers;
};

/// Streams `produce(target_index, offset, base_chunk, out_chunk)` over the
/// base tensor and writes one blob per target.
void stream_targets(const CheckpointSeries& series, const std::string& name, TargetWriters& tw,
                    const std::function<void(std::size_t, std::size_t, std::span<const double>, std::span<double>)>&
                        produce) {
    const std::size_t d = series.tensor(name).element_count();
    BlobReader base = series.open_blob(series.base().step, name);
    std::vector<BlobWriter> blobs;
    blobs.reserve(tw.targets.size());
    for (auto& w : tw.writers) blobs.push_back(w->open_tensor(name));
    std::vector<double> b(kStreamChunk), o(kStreamChunk);
    for (std::size_t offset = 0; offset < d; offset += kStreamChunk) {
        const std::size_t len = std::min(kStreamChunk, d - offset);
        std::span<double> bs(b.data(), len), os(o.data(), len);
        base.read(bs);
        for (std::size_t j = 0; j < blobs.size(); ++j) {
            produce(j, offset, bs, os);
            blobs[j].append(os);
        }
    }
    for (std::size_t j = 0; j < blobs.size(); ++j) tw.writers[j]->commit(name, blobs[j].finish());
}

void write_base_copies(const CheckpointSeries& series, const std::string& name, TargetWriters& tw) {
    stream_targets(series, name, tw, [](std::size_t, std::size_t, std::span<const double> base, std::span<double> out) {
        std::copy(base.begin(), base.end(), out.begin());
    });
}

/// out = base + sum_k c[target][k] v_k, v_k supplied as full-length rows.
void write_svd_predictions(const CheckpointSeries& series, const std::string& name, TargetWriters& tw,
                           const std::vector<std::vector<double>>& coeffs,
                           const std::vector<std::span<const double>>& vectors) {
    std::vector<double> delta(kStreamChunk);
    stream_targets(series, name, tw,
                   [&](std::size_t j, std::size_t offset, std::span<const double> base, std::span<double> out) {
                       const std::size_t len = base.size();
                       const double* v0 = vectors[0].data() + offset;
                       for (std::size_t i = 0; i < len; ++i) delta[i] = coeffs[j][0] * v0[i];
                       for (std::size_t k = 1; k < vectors.size(); ++k) {
                           const double* v = vectors[k].data() + offset;
                           for (std::size_t i = 0; i < len; ++i) delta[i] += coeffs[j][k] * v[i];
                       }
                       for (std::size_t i = 0; i < len; ++i) out[i] = base[i] + delta[i];
                   });
}

void write_raw_predictions(const CheckpointSeries& series, const TrajectoryMatrix& traj, const ExtrapolationConfig& cfg,
                           TargetWriters& tw) {
    const std::string& name = traj.tensor_name();
    std::vector<std::vector<double>> weights;
    for (auto target : tw.targets) weights.push_back(evaluation_weights(traj.steps(), cfg.fit, cfg.poly_order, target));
    BlobReader base = series.open_blob(series.base().step, name);
    std::vector<BlobWriter> blobs;
    for (auto& w : tw.writers) blobs.push_back(w->open_tensor(name));
    std::vector<double> b, delta, out;
    traj.for_each_chunk([&](const RowChunk& c) {
        b.resize(c.length);
        delta.resize(c.length);
        out.resize(c.length);
        base.read(b);
        for (std::size_t j = 0; j < blobs.size(); ++j) {
            std::fill(delta.begin(), delta.end(), 0.0);
            for (std::size_t t = 0; t < c.rows; ++t) {
                const auto r = c.row(t);
                for (std::size_t i = 0; i < c.length; ++i) delta[i] += weights[j][t] * r[i];
            }
            for (std::size_t i = 0; i < c.length; ++i) out[i] = b[i] + delta[i];
            blobs[j].append(out);
        }
    });
    for (std::size_t j = 0; j < blobs.size(); ++j) tw.writers[j]->commit(name, blobs[j].finish());
}

struct ExtrapolationRequest {
    Method method = Method::Relex;
    ExtrapolationConfig config;
    std::optional<double> alpha;
    std::optional<std::int64_t> t0;
};

TensorOutcome extrapolate_tensor(const CheckpointSeries& series, const std::string& name,
                                 const ExtrapolationRequest& request, TargetWriters& tw, const fs::path& model_dir,
                                 const GramCache* cache) {
    const ExtrapolationConfig& cfg = request.config;
    TensorOutcome outcome;
    outcome.name = name;

    switch (request.method) {
        case Method::Expo: {
            BlobReader cut = series.open_blob(cfg.t_cut, name);
            std::vector<double> theta(kStreamChunk);
            stream_targets(series, name, tw,
                           [&](std::size_t j, std::size_t, std::span<const double> base, std::span<double> out) {
                               const std::span<double> cs(theta.data(), base.size());
                               if (j == 0) cut.read(cs);
                               const auto r = expo(base, cs, *request.alpha);
                               std::copy(r.begin(), r.end(), out.begin());
                           });
            return outcome;
        }
        case Method::Weight: {
            BlobReader from = series.open_blob(*request.t0, name);
            BlobReader cut = series.open_blob(cfg.t_cut, name);
            std::vector<double> a(kStreamChunk), c(kStreamChunk);
            stream_targets(series, name, tw,
                           [&](std::size_t j, std::size_t, std::span<const double> base, std::span<double> out) {
                               const std::span<double> as(a.data(), base.size()), cs(c.data(), base.size());
                               if (j == 0) {
                                   from.read(as);
                                   cut.read(cs);
                               }
                               const auto r = weight_extrapolate(as, cs, *request.t0, cfg.t_cut, tw.targets[j]);
                               std::copy(r.begin(), r.end(), out.begin());
                           });
            return outcome;
        }
        case Method::AlphaRl:
        case Method::Raw:
        case Method::Relex:
            break;
    }

    const TrajectoryMatrix traj = build_trajectory(series, name, cfg.t_cut);
    if (request.method == Method::AlphaRl) {
        const auto norms = delta_norms(traj);
        if (std::all_of(norms.begin(), norms.end(), [](double n) { return n == 0.0; })) {
            outcome.skipped = true;
            write_base_copies(series, name, tw);
            return outcome;
        }
        for (std::size_t j = 0; j < tw.targets.size(); ++j) {
            const std::vector<double> pred = alpharl_extrapolate(series, name, cfg.t_cut, tw.targets[j]);
            tw.writers[j]->write_tensor(name, pred);
        }
        return outcome;
    }
    const bool raw = request.method == Method::Raw || cfg.space == Space::Raw;
    if (raw) {
        write_raw_predictions(series, traj, cfg, tw);
        return outcome;
    }

    const Matrix gram = cache ? cache->at(name).leading(traj.rows()) : gram_matrix(traj);
    if (gram.frobenius_norm() == 0.0) {
        outcome.skipped = true;
        write_base_copies(series, name, tw);
        return outcome;
    }

    std::vector<std::vector<double>> coeffs;
    if (cfg.rank == 1 && cfg.fit == FitKind::Linear) {
        Rank1Model model = fit_rank1(name, truncated_svd_from_gram(traj, gram, 1));
        outcome.fit = model.fit;
        outcome.sigma1 = model.sigma1;
        for (auto target : tw.targets) coeffs.push_back({model.coefficient_at(static_cast<double>(target))});
        write_svd_predictions(series, name, tw, coeffs, {std::span<const double>(model.v1)});
        save_model(model, model_dir);
        return outcome;
    }

    const SpectralDecomposition dec = truncated_svd_from_gram(traj, gram, cfg.rank);
    const std::vector<double> ts(dec.steps.begin(), dec.steps.end());
    outcome.fit = linear_fit(ts, dec.coefficient_series(0));
    outcome.sigma1 = dec.singular_values[0];
    for (auto target : tw.targets) coeffs.push_back(extrapolate_coefficients(dec, cfg, target));
    std::vector<std::span<const double>> vectors;
    for (std::size_t k = 0; k < dec.rank; ++k) vectors.push_back(dec.right_vectors.row(k));
    write_svd_predictions(series, name, tw, coeffs, vectors);
    return outcome;
}

ExtrapolationRequest make_request(const CheckpointSeries& series, const CommandOptions& options, std::int64_t t_cut,
                                  const std::vector<std::int64_t>& targets) {
    ExtrapolationRequest request;
    request.method = options.method;
    request.config.t_cut = t_cut;
    request.config.target_steps = targets;
    request.config.rank = options.rank.value_or(1);
    request.config.fit = options.fit;
    request.config.space = options.method == Method::Raw ? Space::Raw : options.space;
    request.alpha = options.alpha;
    request.t0 = options.t0;
    request.config.validate();

    if (targets.empty()) fail(ErrorKind::InvalidArgument, "--targets is required");
    for (auto t : targets) {
        if (t <= series.base().step) {
            fail(ErrorKind::InvalidArgument,
                 fmt::format("target {} must come after the base step {}", t, series.base().step));
        }
    }
    if (t_cut <= series.base().step) {
        fail(ErrorKind::InvalidArgument, fmt::format("t_cut {} must come after the base step", t_cut));
    }
    const std::size_t window = window_size(series, t_cut);

    switch (options.method) {
        case Method::Expo:
            if (!options.alpha) fail(ErrorKind::InvalidArgument, "method expo requires --alpha");
            if (!series.has_step(t_cut)) fail(ErrorKind::UnknownStep, fmt::format("t_cut {} is not an observed step", t_cut));
            break;
        case Method::Weight:
            if (!options.t0) fail(ErrorKind::InvalidArgument, "method weight requires --t0");
            if (!series.has_step(t_cut)) fail(ErrorKind::UnknownStep, fmt::format("t_cut {} is not an observed step", t_cut));
            if (*options.t0 != series.base().step && !series.has_step(*options.t0)) {
                fail(ErrorKind::UnknownStep, fmt::format("t0 {} is not a step of the series", *options.t0));
            }
            if (*options.t0 == t_cut) fail(ErrorKind::DegenerateInterval, fmt::format("t0 and t_cut are both {}", t_cut));
            if (*options.t0 > t_cut) fail(ErrorKind::InvalidArgument, "t0 must precede t_cut");
            break;
        case Method::AlphaRl:
            for (const auto& spec : series.schema()) {
                if (spec.shape.size() != 1 && spec.shape.size() != 2) {
                    fail(ErrorKind::NotAMatrix,
                         fmt::format("method alpharl needs 1-D or 2-D tensors; '{}' has {} dimensions", spec.name,
                                     spec.shape.size()));
                }
            }
            [[fallthrough]];
        case Method::Raw:
        case Method::Relex:
            if (window < 2) {
                fail(ErrorKind::EmptyWindow,
                     fmt::format("need at least 2 observed steps <= {}, found {}", t_cut, window));
            }
            if (options.method != Method::AlphaRl && request.config.space == Space::Svd && request.config.rank > window) {
                fail(ErrorKind::RankOutOfRange,
                     fmt::format("rank {} exceeds the {} observed steps <= {}", request.config.rank, window, t_cut));
            }
            break;
    }
    return request;
}

std::vector<std::int64_t> normalized_steps(std::vector<std::int64_t> steps) {
    std::sort(steps.begin(), steps.end());
    steps.erase(std::unique(steps.begin(), steps.end()), steps.end());
    return steps;
}

ExtrapolationSummary run_extrapolation(const CheckpointSeries& series, const ExtrapolationRequest& request,
                                       const fs::path& out, std::size_t workers, const GramCache* cache) {
    ensure_dir(out);
    if (fs::exists(series.root()) && fs::equivalent(series.root(), out)) {
        fail(ErrorKind::InvalidArgument, "--out must differ from the input series");
    }
    const std::vector<std::int64_t>& targets = request.config.target_steps;
    const std::vector<TensorSpec>& schema = series.schema();

    write_series_index(out, series.base().step, targets, schema);
    copy_checkpoint(series, series.base().step, out);
    TargetWriters tw;
    tw.targets = targets;
    for (auto t : targets) tw.writers.push_back(std::make_unique<CheckpointWriter>(out, t, schema));
    const fs::path model_dir = out / "models";
    if (request.method == Method::Relex && request.config.space == Space::Svd) ensure_dir(model_dir);

    const std::vector<TensorSpec> specs = sorted_schema(series);
    ExtrapolationSummary summary;
    summary.method = request.method;
    summary.t_cut = request.config.t_cut;
    summary.targets = targets;
    summary.window = window_size(series, request.config.t_cut);
    summary.tensors.resize(specs.size());
    parallel_for(specs.size(), workers, [&](std::size_t i) {
        for_tensor(specs[i].name, [&] {
            summary.tensors[i] = extrapolate_tensor(series, specs[i].name, request, tw, model_dir, cache);
        });
    });
    for (auto& w : tw.writers) w->finish();
    return summary;
}

json options_echo(const CommandOptions& options) {
    json j{{"method", std::string(method_name(options.method))},
           {"rank", options.rank.value_or(1)},
           {"fit", std::string(fit_name(options.fit))},
           {"space", std::string(space_name(options.space))}};
    if (options.alpha) j["alpha"] = *options.alpha;
    if (options.t0) j["t0"] = *options.t0;
    return j;
}

void write_timing(const fs::path& out, Clock::time_point start) {
    write_json_file(out / "timing.json", resource_usage(start));
}

}  // namespace

// --- option parsing ---------------------------------------------------------------

std::string_view method_name(Method method) {
    switch (method) {
        case Method::Relex: return "relex";
        case Method::Raw: return "raw";
        case Method::Expo: return "expo";
        case Method::Weight: return "weight";
        case Method::AlphaRl: return "alpharl";
    }
    return "relex";
}

Method parse_method(std::string_view name) {
    for (auto m : {Method::Relex, Method::Raw, Method::Expo, Method::Weight, Method::AlphaRl}) {
        if (method_name(m) == name) return m;
    }
    fail(ErrorKind::InvalidArgument, fmt::format("unknown method '{}'", name));
}

FitKind parse_fit(std::string_view name) {
    if (name == "linear") return FitKind::Linear;
    if (name == "poly3") return FitKind::Polynomial;
    fail(ErrorKind::InvalidArgument, fmt::format("unknown fit '{}' (expected linear or poly3)", name));
}

std::string_view fit_name(FitKind fit) { return fit == FitKind::Linear ? "linear" : "poly3"; }

Space parse_space(std::string_view name) {
    if (name == "svd") return Space::Svd;
    if (name == "raw") return Space::Raw;
    fail(ErrorKind::InvalidArgument, fmt::format("unknown space '{}' (expected svd or raw)", name));
}

std::string_view space_name(Space space) { return space == Space::Svd ? "svd" : "raw"; }

void apply_config(const json& doc, CommandOptions& o) {
    if (!doc.is_object()) fail(ErrorKind::BadConfig, "config must be a JSON object");
    try {
        for (const auto& [key, value] : doc.items()) {
            if (key == "series") o.series = value.get<std::string>();
            else if (key == "out") o.out = value.get<std::string>();
            else if (key == "predicted") o.predicted = value.get<std::string>();
            else if (key == "actual") o.actual = value.get<std::string>();
            else if (key == "t_cut") o.t_cut = value.get<std::int64_t>();
            else if (key == "targets") o.targets = value.get<std::vector<std::int64_t>>();
            else if (key == "t_cuts") o.t_cuts = value.get<std::vector<std::int64_t>>();
            else if (key == "steps") o.steps = value.get<std::vector<std::int64_t>>();
            else if (key == "base_step") o.base_step = value.get<std::int64_t>();
            else if (key == "rank") o.rank = value.get<std::size_t>();
            else if (key == "fit") o.fit = parse_fit(value.get<std::string>());
            else if (key == "space") o.space = parse_space(value.get<std::string>());
            else if (key == "method") o.method = parse_method(value.get<std::string>());
            else if (key == "alpha") o.alpha = value.get<double>();
            else if (key == "t0") o.t0 = value.get<std::int64_t>();
            else if (key == "workers") o.workers = value.get<std::size_t>();
            else if (key == "threshold") o.threshold = value.get<double>();
            else if (key == "no_cache") o.gram_cache = !value.get<bool>();
            else if (key == "verify") o.verify = value.get<bool>();
            else fail(ErrorKind::BadConfig, fmt::format("unknown config key '{}'", key));
        }
    } catch (const json::exception& e) {
        fail(ErrorKind::BadConfig, fmt::format("bad config value: {}", e.what()));
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::BadConfig) throw;
        fail(ErrorKind::BadConfig, e.message());
    }
}

int exit_code(const Error& error) { return is_numerical(error.kind()) ? 3 : 2; }

json resource_usage(Clock::time_point start) {
    const double seconds = std::chrono::duration<double>(Clock::now() - start).count();
    rusage usage{};
    getrusage(RUSAGE_SELF, &usage);
    return json{{"wall_seconds", seconds}, {"peak_rss_bytes", static_cast<std::int64_t>(usage.ru_maxrss) * 1024}};
}

// --- commands -------------------------------------------------------------------------

json cmd_inspect(const CommandOptions& options) {
    const CheckpointSeries series = open_input(options.series, options.verify);
    json tensors = json::array();
    std::size_t total = 0;
    for (const auto& spec : sorted_schema(series)) {
        tensors.push_back({{"name", spec.name},
                           {"shape", spec.shape},
                           {"dtype", std::string(dtype_name(spec.dtype))},
                           {"elements", spec.element_count()}});
        total += spec.element_count();
    }
    json doc{{"root", series.root().string()},
             {"base_step", series.base().step},
             {"observed_steps", series.observed_steps()},
             {"tensor_count", series.schema().size()},
             {"total_elements", total},
             {"checksums_verified", options.verify},
             {"tensors", std::move(tensors)}};
    if (!options.out.empty()) {
        ensure_dir(options.out);
        write_json_file(options.out / "inspect.json", doc);
    }
    return doc;
}

LinearityReport cmd_diagnose(const CommandOptions& options) {
    const auto start = Clock::now();
    const CheckpointSeries series = open_input(options.series, options.verify);
    ensure_dir(options.out);
    const std::int64_t t_cut = resolve_t_cut(series, options);
    const std::size_t rank = options.rank.value_or(5);
    const LinearityReport report = linearity_report(series, t_cut, rank, options.threshold, options.workers);

    write_linearity_csv(report, options.out / "linearity.csv");
    write_explained_variance_csv(report, options.out / "explained_variance.csv");
    write_coefficients_csv(report, options.out / "coefficients.csv");
    std::vector<double> r2;
    for (const auto& r : report.records) r2.push_back(r.r_squared);
    write_json_file(options.out / "summary.json", json{{"t_cut", t_cut},
                                                       {"rank", rank},
                                                       {"window", window_size(series, t_cut)},
                                                       {"tensors", report.records.size()},
                                                       {"skipped", report.skipped},
                                                       {"fraction_above", report.fraction_above},
                                                       {"r2", r2_distribution(r2, options.threshold)}});
    write_timing(options.out, start);
    return report;
}

json ExtrapolationSummary::to_json(const CommandOptions& options, double threshold) const {
    json tensors_json = json::array();
    json skipped = json::array();
    std::vector<double> r2;
    for (const auto& t : tensors) {
        json entry{{"name", t.name}};
        if (t.skipped) {
            entry["skipped"] = true;
            skipped.push_back(t.name);
        }
        if (t.fit) {
            entry["r2"] = t.fit->r_squared;
            entry["slope"] = t.fit->a;
            entry["intercept"] = t.fit->b;
            entry["sigma1"] = t.sigma1;
            r2.push_back(t.fit->r_squared);
        }
        tensors_json.push_back(std::move(entry));
    }
    json doc = options_echo(options);
    doc["t_cut"] = t_cut;
    doc["targets"] = targets;
    doc["window"] = window;
    doc["tensors"] = std::move(tensors_json);
    doc["skipped"] = std::move(skipped);
    doc["r2"] = r2_distribution(r2, threshold);
    return doc;
}

ExtrapolationSummary cmd_extrapolate(const CommandOptions& options) {
    const auto start = Clock::now();
    const CheckpointSeries series = open_input(options.series, options.verify);
    const std::int64_t t_cut = resolve_t_cut(series, options);
    const auto request = make_request(series, options, t_cut, normalized_steps(options.targets));
    ExtrapolationSummary summary = run_extrapolation(series, request, options.out, options.workers, nullptr);

    json doc = summary.to_json(options, options.threshold);
    const std::int64_t last = series.observed().back().step;
    doc["cost_ratio"] = static_cast<double>(t_cut - series.base().step) / static_cast<double>(last - series.base().step);
    write_json_file(options.out / "summary.json", doc);
    write_timing(options.out, start);
    return summary;
}

std::vector<SweepCell> cmd_sweep(const CommandOptions& options) {
    const auto start = Clock::now();
    const CheckpointSeries series = open_input(options.series, options.verify);
    ensure_dir(options.out);
    const std::vector<std::int64_t> t_cuts = normalized_steps(options.t_cuts);
    const std::vector<std::int64_t> targets = normalized_steps(options.targets);
    if (t_cuts.empty()) fail(ErrorKind::InvalidArgument, "--t-cuts is required");
    if (targets.empty()) fail(ErrorKind::InvalidArgument, "--targets is required");
    for (auto c : t_cuts) make_request(series, options, c, targets);

    const bool svd = options.method == Method::Relex && options.space == Space::Svd;
    GramCache cache;
    if (svd && options.gram_cache) {
        const std::vector<TensorSpec> specs = sorted_schema(series);
        std::vector<Matrix> grams(specs.size());
        parallel_for(specs.size(), options.workers, [&](std::size_t i) {
            for_tensor(specs[i].name,
                       [&] { grams[i] = gram_matrix(build_trajectory(series, specs[i].name, t_cuts.back())); });
        });
        for (std::size_t i = 0; i < specs.size(); ++i) cache.emplace(specs[i].name, std::move(grams[i]));
    }

    std::vector<SweepCell> cells;
    json cell_summaries = json::array();
    for (auto c : t_cuts) {
        const fs::path rel = fmt::format("tcut_{}", c);
        std::optional<ErrorKind> failure;
        std::string message;
        try {
            const auto request = make_request(series, options, c, targets);
            const auto summary =
                run_extrapolation(series, request, options.out / rel, options.workers, cache.empty() ? nullptr : &cache);
            json doc = summary.to_json(options, options.threshold);
            write_json_file(options.out / rel / "summary.json", doc);
            cell_summaries.push_back(std::move(doc));
        } catch (const Error& e) {
            failure = e.kind();
            message = e.message();
            cell_summaries.push_back(json{{"t_cut", c}, {"error", e.what()}});
        }
        for (auto t : targets) {
            SweepCell cell;
            cell.t_cut = c;
            cell.target = t;
            cell.reconstruction = t <= c;
            cell.failure = failure;
            cell.message = message;
            cell.output = rel / fmt::format("step_{}", t);
            cells.push_back(std::move(cell));
        }
    }

    std::ofstream grid(options.out / "grid.csv", std::ios::trunc);
    if (!grid) fail(ErrorKind::IoFailure, "cannot write grid.csv");
    grid << "t_cut,target,kind,status,output\n";
    for (const auto& cell : cells) {
        grid << cell.t_cut << ',' << cell.target << ',' << (cell.reconstruction ? "reconstruction" : "extrapolation")
             << ',' << (cell.failure ? std::string(to_string(*cell.failure)) : std::string("ok")) << ','
             << cell.output.generic_string() << '\n';
    }
    json doc = options_echo(options);
    doc["t_cuts"] = t_cuts;
    doc["targets"] = targets;
    doc["gram_cache"] = !cache.empty();
    doc["cells"] = std::move(cell_summaries);
    write_json_file(options.out / "summary.json", doc);
    write_timing(options.out, start);
    return cells;
}

std::vector<AlignmentRecord> cmd_align(const CommandOptions& options) {
    const auto start = Clock::now();
    if (options.predicted.empty()) fail(ErrorKind::InvalidArgument, "--predicted is required");
    if (options.actual.empty()) fail(ErrorKind::InvalidArgument, "--actual is required");
    const CheckpointSeries predicted = open_series(options.predicted, options.verify);
    const CheckpointSeries actual = open_series(options.actual, options.verify);
    ensure_dir(options.out);

    std::vector<std::int64_t> steps = normalized_steps(options.steps);
    if (steps.empty()) {
        for (auto s : predicted.observed_steps()) {
            if (actual.has_step(s) && s != actual.base().step) steps.push_back(s);
        }
    }
    if (steps.empty()) fail(ErrorKind::MissingStep, "predicted and actual series share no observed steps");

    const auto records = alignment_report(predicted, actual, steps, options.workers, options.base_step);
    write_alignment_csv(records, options.out / "alignment.csv");
    write_alignment_summary_csv(records, options.out / "alignment_summary.csv");
    json per_step = json::array();
    for (const auto& r : records) {
        per_step.push_back({{"step", r.step},
                            {"mean_cosine", r.mean_cosine ? json(*r.mean_cosine) : json(nullptr)},
                            {"mean_norm_ratio", r.mean_norm_ratio ? json(*r.mean_norm_ratio) : json(nullptr)}});
    }
    write_json_file(options.out / "summary.json",
                    json{{"base_step", options.base_step.value_or(actual.base().step)}, {"steps", std::move(per_step)}});
    write_timing(options.out, start);
    return records;
}

GroundTruth cmd_synth(const CommandOptions& options) {
    const auto start = Clock::now();
    if (options.config.empty()) fail(ErrorKind::BadConfig, "synth requires --config with a plant config");
    const PlantConfig config = load_plant_config(options.config);
    ensure_dir(options.out);
    GroundTruth truth = plant_series(config, options.out, options.workers);
    write_timing(options.out, start);
    return truth;
}

}  // namespace trajex
