// SPDX-License-Identifier: Apache-2.0
//
// trajex: checkpoint trajectory analysis and extrapolation.
//
//   trajex inspect     --series DIR [--verify]
//   trajex diagnose    --series DIR [--t-cut N] [--rank R] --out DIR
//   trajex extrapolate --series DIR --targets A,B [--method M ...] --out DIR
//   trajex sweep       --series DIR --t-cuts A,B --targets C,D --out DIR
//   trajex align       --predicted DIR --actual DIR [--steps A,B] --out DIR
//   trajex synth       --config PLANT.json --out DIR
//
// Exit status: 0 success, 2 invalid input, 3 numerical failure.

#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "trajex/commands.hpp"

using namespace trajex;

namespace {

struct Flags {
    std::string series, out, config, predicted, actual;
    std::int64_t t_cut = 0, t0 = 0, base_step = 0;
    std::vector<std::int64_t> targets, t_cuts, steps;
    std::size_t rank = 1, workers = 1;
    std::string fit = "linear", space = "svd", method = "relex";
    double alpha = 0.0, threshold = 0.98;
    bool no_cache = false, verify = false;
};

using OptionMap = std::map<std::string, CLI::Option*>;

OptionMap add_flags(CLI::App* app, Flags& f, const std::vector<std::string>& names) {
    OptionMap m;
    auto want = [&](const std::string& n) { return std::find(names.begin(), names.end(), n) != names.end(); };
    if (want("series")) m["series"] = app->add_option("--series", f.series, "checkpoint series directory");
    if (want("out")) m["out"] = app->add_option("--out", f.out, "output directory");
    if (want("config")) m["config"] = app->add_option("--config", f.config, "JSON config file; flags override it");
    if (want("predicted")) m["predicted"] = app->add_option("--predicted", f.predicted, "predicted series directory");
    if (want("actual")) m["actual"] = app->add_option("--actual", f.actual, "actual series directory");
    if (want("t_cut")) m["t_cut"] = app->add_option("--t-cut", f.t_cut, "last observed step used for fitting");
    if (want("targets")) m["targets"] = app->add_option("--targets", f.targets, "target steps")->delimiter(',');
    if (want("t_cuts")) m["t_cuts"] = app->add_option("--t-cuts", f.t_cuts, "observation windows to sweep")->delimiter(',');
    if (want("steps")) m["steps"] = app->add_option("--steps", f.steps, "steps to compare")->delimiter(',');
    if (want("base_step")) m["base_step"] = app->add_option("--base-step", f.base_step, "reference checkpoint step");
    if (want("rank")) m["rank"] = app->add_option("--rank", f.rank, "number of SVD components");
    if (want("fit"))
        m["fit"] = app->add_option("--fit", f.fit, "coefficient fit")->check(CLI::IsMember({"linear", "poly3"}));
    if (want("space"))
        m["space"] = app->add_option("--space", f.space, "fitting space")->check(CLI::IsMember({"svd", "raw"}));
    if (want("method"))
        m["method"] = app->add_option("--method", f.method, "extrapolation method")
                          ->check(CLI::IsMember({"relex", "raw", "expo", "weight", "alpharl"}));
    if (want("alpha")) m["alpha"] = app->add_option("--alpha", f.alpha, "expo step size");
    if (want("t0")) m["t0"] = app->add_option("--t0", f.t0, "weight extrapolation anchor step");
    if (want("workers")) m["workers"] = app->add_option("--workers", f.workers, "tensors processed in parallel")->check(CLI::PositiveNumber);
    if (want("threshold")) m["threshold"] = app->add_option("--threshold", f.threshold, "R^2 threshold for reports");
    if (want("no_cache")) m["no_cache"] = app->add_flag("--no-cache", f.no_cache, "recompute Gram matrices per window");
    if (want("verify")) m["verify"] = app->add_flag("--verify", f.verify, "verify every blob checksum up front");
    return m;
}

CommandOptions resolve(const Flags& f, const OptionMap& m, bool config_is_options) {
    CommandOptions o;
    auto given = [&](const char* key) {
        auto it = m.find(key);
        return it != m.end() && it->second->count() > 0;
    };
    if (given("config")) {
        if (config_is_options) {
            std::ifstream in(f.config);
            if (!in) fail(ErrorKind::BadConfig, fmt::format("cannot open config '{}'", f.config));
            nlohmann::json doc;
            try {
                doc = nlohmann::json::parse(in);
            } catch (const nlohmann::json::exception& e) {
                fail(ErrorKind::BadConfig, fmt::format("malformed JSON in '{}': {}", f.config, e.what()));
            }
            apply_config(doc, o);
        } else {
            o.config = f.config;
        }
    }
    if (given("series")) o.series = f.series;
    if (given("out")) o.out = f.out;
    if (given("predicted")) o.predicted = f.predicted;
    if (given("actual")) o.actual = f.actual;
    if (given("t_cut")) o.t_cut = f.t_cut;
    if (given("targets")) o.targets = f.targets;
    if (given("t_cuts")) o.t_cuts = f.t_cuts;
    if (given("steps")) o.steps = f.steps;
    if (given("base_step")) o.base_step = f.base_step;
    if (given("rank")) o.rank = f.rank;
    if (given("fit")) o.fit = parse_fit(f.fit);
    if (given("space")) o.space = parse_space(f.space);
    if (given("method")) o.method = parse_method(f.method);
    if (given("alpha")) o.alpha = f.alpha;
    if (given("t0")) o.t0 = f.t0;
    if (given("workers")) o.workers = f.workers;
    if (given("threshold")) o.threshold = f.threshold;
    if (given("no_cache")) o.gram_cache = !f.no_cache;
    if (given("verify")) o.verify = f.verify;
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Checkpoint trajectory analysis and extrapolation"};
    app.require_subcommand(1);
    Flags f;

    const std::vector<std::string> extrapolation_flags = {"series", "out",    "config", "t_cut",   "targets",
                                                          "rank",   "fit",    "space",  "method",  "alpha",
                                                          "t0",     "workers", "threshold", "verify"};
    auto* inspect = app.add_subcommand("inspect", "Print the layout of a series");
    auto* diagnose = app.add_subcommand("diagnose", "Linearity and explained-variance reports");
    auto* extrapolate = app.add_subcommand("extrapolate", "Predict checkpoints at target steps");
    auto* sweep = app.add_subcommand("sweep", "Extrapolate over a grid of observation windows");
    auto* align = app.add_subcommand("align", "Compare predicted checkpoints with actual ones");
    auto* synth = app.add_subcommand("synth", "Generate a planted synthetic series");

    std::map<CLI::App*, OptionMap> maps;
    maps[inspect] = add_flags(inspect, f, {"series", "out", "config", "verify"});
    maps[diagnose] = add_flags(diagnose, f, {"series", "out", "config", "t_cut", "rank", "workers", "threshold", "verify"});
    maps[extrapolate] = add_flags(extrapolate, f, extrapolation_flags);
    auto sweep_flags = extrapolation_flags;
    sweep_flags.insert(sweep_flags.end(), {"t_cuts", "no_cache"});
    maps[sweep] = add_flags(sweep, f, sweep_flags);
    maps[align] =
        add_flags(align, f, {"predicted", "actual", "out", "config", "steps", "base_step", "workers", "verify"});
    maps[synth] = add_flags(synth, f, {"config", "out", "workers"});

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    CLI::App* selected = app.get_subcommands().front();
    try {
        const CommandOptions options = resolve(f, maps[selected], selected != synth);
        if (selected == inspect) {
            std::cout << cmd_inspect(options).dump(2) << '\n';
        } else if (selected == diagnose) {
            const auto report = cmd_diagnose(options);
            fmt::print("{} tensors, {} skipped, fraction with R^2 > {}: {}\n", report.records.size(),
                       report.skipped.size(), report.threshold, format_double(report.fraction_above));
        } else if (selected == extrapolate) {
            const auto summary = cmd_extrapolate(options);
            fmt::print("wrote {} target checkpoint(s) for {} tensors to {}\n", summary.targets.size(),
                       summary.tensors.size(), options.out.string());
        } else if (selected == sweep) {
            const auto cells = cmd_sweep(options);
            int code = 0;
            for (const auto& cell : cells) {
                if (!cell.failure) continue;
                const int c = is_numerical(*cell.failure) ? 3 : 2;
                code = std::max(code, c);
                fmt::print(stderr, "trajex: cell t_cut={} target={} failed: {}\n", cell.t_cut, cell.target,
                           cell.message);
            }
            fmt::print("{} cells written to {}\n", cells.size(), options.out.string());
            return code;
        } else if (selected == align) {
            for (const auto& r : cmd_align(options)) {
                fmt::print("step {}: mean cosine {}, mean norm ratio {}\n", r.step,
                           r.mean_cosine ? format_double(*r.mean_cosine) : "undefined",
                           r.mean_norm_ratio ? format_double(*r.mean_norm_ratio) : "undefined");
            }
        } else if (selected == synth) {
            const auto truth = cmd_synth(options);
            fmt::print("planted {} tensors over {} steps in {}\n", truth.tensors.size(), truth.t_values.size(),
                       options.out.string());
        }
    } catch (const Error& e) {
        const int code = exit_code(e);
        fmt::print(stderr, "trajex {}: {}\n", selected->get_name(), e.what());
        if (code == 2) fmt::print(stderr, "run 'trajex {} --help' for usage\n", selected->get_name());
        return code;
    } catch (const std::exception& e) {
        fmt::print(stderr, "trajex {}: {}\n", selected->get_name(), e.what());
        return 2;
    }
    return 0;
}
