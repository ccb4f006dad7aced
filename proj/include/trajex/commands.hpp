// SPDX-License-Identifier: Apache-2.0
//
// The operations behind each `trajex` subcommand. Each one validates its
// options, does the work, writes its outputs under `out`, and throws
// trajex::Error on failure; exit_code() maps failures onto the CLI contract.

#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trajex/diagnostics.hpp"
#include "trajex/error.hpp"
#include "trajex/extrapolator.hpp"
#include "trajex/synthgen.hpp"

namespace trajex {

enum class Method { Relex, Raw, Expo, Weight, AlphaRl };

std::string_view method_name(Method method);
Method parse_method(std::string_view name);

/// "linear" or "poly3".
FitKind parse_fit(std::string_view name);
std::string_view fit_name(FitKind fit);
Space parse_space(std::string_view name);
std::string_view space_name(Space space);

struct CommandOptions {
    std::filesystem::path series;
    std::filesystem::path out;
    std::filesystem::path config;  ///< synth: the plant config
    std::filesystem::path predicted;
    std::filesystem::path actual;

    std::optional<std::int64_t> t_cut;  ///< defaults to the last observed step
    std::vector<std::int64_t> targets;
    std::vector<std::int64_t> t_cuts;
    std::vector<std::int64_t> steps;  ///< align: defaults to the steps both series share
    std::optional<std::int64_t> base_step;

    std::optional<std::size_t> rank;  ///< extrapolate/sweep default 1, diagnose default 5
    FitKind fit = FitKind::Linear;
    Space space = Space::Svd;
    Method method = Method::Relex;
    std::optional<double> alpha;
    std::optional<std::int64_t> t0;

    std::size_t workers = 1;
    double threshold = 0.98;
    bool gram_cache = true;
    bool verify = false;
};

/// Fills options from a JSON object whose keys mirror the long flags
/// (t_cut, targets, rank, fit, space, method, alpha, t0, workers, ...).
void apply_config(const nlohmann::json& doc, CommandOptions& options);

/// 0 on success, 3 for numerical failures, 2 for everything else.
int exit_code(const Error& error);

nlohmann::json cmd_inspect(const CommandOptions& options);

LinearityReport cmd_diagnose(const CommandOptions& options);

struct TensorOutcome {
    std::string name;
    bool skipped = false;  ///< all-zero trajectory; the prediction is the base tensor
    std::optional<LinearFit> fit;
    double sigma1 = 0.0;
};

struct ExtrapolationSummary {
    Method method = Method::Relex;
    std::int64_t t_cut = 0;
    std::vector<std::int64_t> targets;
    std::size_t window = 0;
    std::vector<TensorOutcome> tensors;  ///< sorted by name

    nlohmann::json to_json(const CommandOptions& options, double threshold) const;
};

ExtrapolationSummary cmd_extrapolate(const CommandOptions& options);

struct SweepCell {
    std::int64_t t_cut = 0;
    std::int64_t target = 0;
    bool reconstruction = false;  ///< target <= t_cut
    std::optional<ErrorKind> failure;
    std::string message;
    std::filesystem::path output;  ///< relative to the sweep output directory
};

std::vector<SweepCell> cmd_sweep(const CommandOptions& options);

std::vector<AlignmentRecord> cmd_align(const CommandOptions& options);

GroundTruth cmd_synth(const CommandOptions& options);

/// Wall time since `start` and peak resident set size, as JSON.
nlohmann::json resource_usage(std::chrono::steady_clock::time_point start);

}  // namespace trajex
