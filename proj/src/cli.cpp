#include "apsk/cli.hpp"

#include "apsk/errors.hpp"
#include "apsk/noise.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace apsk::cli {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<std::string>& command_names() {
    static const std::vector<std::string> names{"simulate",  "strong-rate", "weak-rate",   "sk-limit",
                                                "ap-check",  "moments",     "inequalities", "validate"};
    return names;
}

namespace {

std::vector<std::size_t> dyadic_steps(int lo_exp, int hi_exp) {
    std::vector<std::size_t> out;
    for (int k = lo_exp; k <= hi_exp; ++k) {
        out.push_back(std::size_t{1} << k);
    }
    return out;
}

std::string join(const std::vector<std::string>& items) {
    std::string out;
    for (const auto& s : items) {
        out += (out.empty() ? "" : ", ") + s;
    }
    return out;
}

bool needs_seed(const std::string& command) {
    return command != "inequalities" && command != "validate";
}

bool is_sweep(const std::string& command) {
    return command == "strong-rate" || command == "weak-rate";
}

}  // namespace

ExperimentConfig default_config(const std::string& command) {
    ExperimentConfig c;
    c.command = command;
    c.seed = 20240601;
    c.q0 = {2.0};
    c.p0 = {1.0};
    c.steps = dyadic_steps(4, 9);
    if (command == "strong-rate") {
        c.schemes = {"semi-implicit"};
        c.eps = {1.0, 1e-1, 1e-2, 1e-4};
        c.refine_ratio = 64;
        c.samples = 10000;
        c.assertions.slope_min = 0.35;
        c.assertions.slope_max = 0.65;
        c.assertions.uniformity_ratio = 3.0;
    } else if (command == "weak-rate") {
        c.schemes = {"exponential"};
        c.eps = {1e-6};
        c.refine_ratio = 64;
        c.bias_samples = 2000;
        c.samples = 100000;
        c.test_functions = {"tanh-q1"};
        c.assertions.slope_min = 0.8;
        c.assertions.slope_max = 1.2;
        c.assertions.max_relative_se = 0.2;
    } else if (command == "sk-limit") {
        c.schemes = {"semi-implicit", "exponential"};
        c.eps.clear();
        for (int k = 1; k <= 6; ++k) {
            c.eps.push_back(std::ldexp(1.0, -k));
        }
        c.steps = {1024};
        c.samples = 10000;
        c.assertions.slope_min = 0.8;
        c.assertions.slope_max = 1.2;
    } else if (command == "ap-check") {
        c.models = builtin_model_names();
        c.schemes = {"semi-implicit", "exponential", "semi-implicit-qp", "exponential-qp"};
        c.eps = {1e-8};
        c.steps = {100};
        c.samples = 100;
        c.assertions.tolerance = 1e-6;
    } else if (command == "moments") {
        c.schemes = {"semi-implicit", "exponential"};
        c.eps = {1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6};
        c.steps = {100};
        c.samples = 1000;
        c.assertions.moment_ratio = 2.0;
    } else if (command == "simulate") {
        c.models = {"linear"};
        c.schemes = {"exponential"};
        c.eps = {0.1};
        c.steps = {100};
        c.samples = 4;
    }
    return c;
}

namespace {

template <class T>
void read_field(const json& j, const char* key, T& into, Diagnostics& diag) {
    if (!j.contains(key)) {
        return;
    }
    try {
        into = j.at(key).get<T>();
    } catch (const json::exception& e) {
        diag.errors.push_back(std::string("config key '") + key + "': " + e.what());
    }
}

template <class T>
void read_optional(const json& j, const char* key, std::optional<T>& into, Diagnostics& diag) {
    if (!j.contains(key)) {
        return;
    }
    T value{};
    read_field(j, key, value, diag);
    into = value;
}

// Accepts a scalar or an array.
template <class T>
void read_list(const json& j, const char* key, std::vector<T>& into, Diagnostics& diag) {
    if (!j.contains(key)) {
        return;
    }
    const json& v = j.at(key);
    try {
        if (v.is_array()) {
            into = v.get<std::vector<T>>();
        } else {
            into = {v.get<T>()};
        }
    } catch (const json::exception& e) {
        diag.errors.push_back(std::string("config key '") + key + "': " + e.what());
    }
}

}  // namespace

ExperimentConfig parse_config(const json& j, const std::string& command, Diagnostics& diag) {
    ExperimentConfig c = default_config(command);
    if (!j.is_object()) {
        diag.errors.push_back("config must be a JSON object");
        return c;
    }
    static const std::set<std::string> known{
        "command", "models", "model", "dimension", "model_params", "schemes", "eps", "eps_mode", "T", "N",
        "refine_ratio", "bias_samples", "samples", "seed", "test_functions", "q0", "p0", "q0_limit",
        "sup_over_n", "emit_paths", "resolve_fraction", "out", "threads", "assert", "comment"};
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) {
            diag.errors.push_back("unknown config key '" + key + "'");
        }
    }
    if (j.contains("command")) {
        std::string file_command;
        read_field(j, "command", file_command, diag);
        if (!file_command.empty() && file_command != command && command != "validate") {
            diag.errors.push_back("config is for command '" + file_command + "', not '" + command + "'");
        }
        if (command == "validate" && !file_command.empty()) {
            c = default_config(file_command);
            c.command = file_command;
        }
    } else if (command == "validate") {
        diag.errors.push_back("config has no 'command' key; validate needs it to pick the preset");
        c.command = "simulate";
    }
    read_list(j, "models", c.models, diag);
    read_list(j, "model", c.models, diag);
    read_field(j, "dimension", c.dimension, diag);
    read_field(j, "model_params", c.model_params, diag);
    read_list(j, "schemes", c.schemes, diag);
    read_list(j, "eps", c.eps, diag);
    read_field(j, "eps_mode", c.eps_mode, diag);
    read_field(j, "T", c.horizon, diag);
    read_list(j, "N", c.steps, diag);
    read_field(j, "refine_ratio", c.refine_ratio, diag);
    read_field(j, "bias_samples", c.bias_samples, diag);
    read_field(j, "samples", c.samples, diag);
    if (j.contains("seed")) {
        if (j.at("seed").is_null()) {
            c.seed.reset();
        } else {
            read_optional(j, "seed", c.seed, diag);
        }
    }
    read_list(j, "test_functions", c.test_functions, diag);
    read_list(j, "q0", c.q0, diag);
    read_list(j, "p0", c.p0, diag);
    if (j.contains("q0_limit")) {
        std::vector<double> v;
        read_list(j, "q0_limit", v, diag);
        c.q0_limit = v;
    }
    read_field(j, "sup_over_n", c.sup_over_n, diag);
    read_field(j, "emit_paths", c.emit_paths, diag);
    read_field(j, "resolve_fraction", c.resolve_fraction, diag);
    read_field(j, "out", c.out_dir, diag);
    read_field(j, "threads", c.threads, diag);
    if (j.contains("assert")) {
        const json& a = j.at("assert");
        if (!a.is_object()) {
            diag.errors.push_back("config key 'assert' must be an object");
        } else {
            static const std::set<std::string> known_assert{"slope_min",       "slope_max", "uniformity_ratio",
                                                            "max_relative_se", "moment_ratio", "tolerance"};
            for (const auto& [key, value] : a.items()) {
                if (!known_assert.contains(key)) {
                    diag.errors.push_back("unknown assert key '" + key + "'");
                }
            }
            auto read_assert = [&](const char* key, std::optional<double>& into) {
                if (a.contains(key) && a.at(key).is_null()) {
                    into.reset();
                } else {
                    read_optional(a, key, into, diag);
                }
            };
            read_assert("slope_min", c.assertions.slope_min);
            read_assert("slope_max", c.assertions.slope_max);
            read_assert("uniformity_ratio", c.assertions.uniformity_ratio);
            read_assert("max_relative_se", c.assertions.max_relative_se);
            read_assert("moment_ratio", c.assertions.moment_ratio);
            read_assert("tolerance", c.assertions.tolerance);
        }
    }
    return c;
}

Diagnostics validate_config(const ExperimentConfig& c) {
    Diagnostics d;
    const auto& commands = command_names();
    if (std::find(commands.begin(), commands.end(), c.command) == commands.end()) {
        d.errors.push_back("unknown command '" + c.command + "' (valid: " + join(commands) + ")");
        return d;
    }
    if (c.command == "inequalities") {
        return d;
    }
    if (needs_seed(c.command) && !c.seed) {
        d.errors.push_back("seed missing (set \"seed\" in the config or pass --seed)");
    }
    if (c.dimension < 1 || c.dimension > kMaxDim) {
        d.errors.push_back("dimension must be in [1, " + std::to_string(kMaxDim) + "]");
    }
    if (c.models.empty()) {
        d.errors.push_back("model list empty");
    }
    for (const auto& name : c.models) {
        try {
            (void)make_builtin_model(name, std::clamp(c.dimension, 1, static_cast<int>(kMaxDim)), c.model_params);
        } catch (const UsageError& e) {
            d.errors.push_back(e.what());
        }
    }
    if (c.schemes.empty()) {
        d.errors.push_back("scheme list empty");
    }
    for (const auto& name : c.schemes) {
        if (!parse_scheme(name)) {
            d.errors.push_back("unknown scheme '" + name + "' (valid: " + join(scheme_names()) + ")");
        }
    }
    if (c.eps_mode != "grid" && c.eps_mode != "sqrt-dt") {
        d.errors.push_back("eps_mode must be \"grid\" or \"sqrt-dt\", got \"" + c.eps_mode + "\"");
    }
    const bool eps_from_dt = c.command == "weak-rate" && c.eps_mode == "sqrt-dt";
    if (!eps_from_dt && c.eps.empty()) {
        d.errors.push_back("eps grid empty");
    }
    for (double e : c.eps) {
        if (!(e > 0.0) || !std::isfinite(e)) {
            d.errors.push_back("eps values must be positive and finite");
            break;
        }
    }
    if (c.steps.empty()) {
        d.errors.push_back("dt grid empty");
    }
    for (std::size_t n : c.steps) {
        if (n < 1) {
            d.errors.push_back("N values must be at least 1");
            break;
        }
    }
    if (!(c.horizon > 0.0) || !std::isfinite(c.horizon)) {
        d.errors.push_back("T must be positive and finite");
    }
    const std::size_t min_samples = c.command == "simulate" || c.command == "ap-check" ? 1 : 2;
    if (c.samples < min_samples) {
        d.errors.push_back("samples must be at least " + std::to_string(min_samples));
    }
    if (c.threads < 1) {
        d.errors.push_back("threads must be at least 1");
    }
    auto check_ic = [&](const std::vector<double>& v, const char* what) {
        if (v.size() != 1 && v.size() != static_cast<std::size_t>(c.dimension)) {
            d.errors.push_back(std::string(what) + " must have 1 or " + std::to_string(c.dimension) + " entries");
        }
        for (double x : v) {
            if (!std::isfinite(x)) {
                d.errors.push_back(std::string(what) + " has non-finite entries");
                break;
            }
        }
    };
    check_ic(c.q0, "q0");
    check_ic(c.p0, "p0");
    if (c.q0_limit) {
        check_ic(*c.q0_limit, "q0_limit");
    }
    if (is_sweep(c.command)) {
        if (c.refine_ratio < 1) {
            d.errors.push_back("refine_ratio must be at least 1");
        } else if (c.refine_ratio == 1) {
            d.warnings.push_back(
                "refine_ratio=1: the reference runs on the coarse grid itself, so errors against it are biased "
                "(exponential-scheme errors collapse to zero); use refine_ratio >= 2");
        }
        if (!c.steps.empty() && c.eps_mode == "grid") {
            const std::size_t top = *std::max_element(c.steps.begin(), c.steps.end());
            for (std::size_t n : c.steps) {
                if (n >= 1 && top % n != 0) {
                    d.errors.push_back("N=" + std::to_string(n) + " does not divide the finest N=" + std::to_string(top));
                }
            }
        }
    }
    if (c.command == "weak-rate") {
        if (c.test_functions.empty()) {
            d.errors.push_back("test function list empty");
        }
        for (const auto& name : c.test_functions) {
            try {
                (void)builtin_test_function(name);
            } catch (const UsageError& e) {
                d.errors.push_back(e.what());
            }
        }
        if (!(c.resolve_fraction > 0.0)) {
            d.errors.push_back("resolve_fraction must be positive");
        }
    }
    const auto& a = c.assertions;
    if (a.slope_min && a.slope_max && *a.slope_min > *a.slope_max) {
        d.errors.push_back("assert.slope_min exceeds assert.slope_max");
    }
    const bool fits = c.command == "strong-rate" || c.command == "weak-rate" || c.command == "sk-limit";
    if (fits && (a.slope_min || a.slope_max)) {
        const std::size_t points = c.command == "sk-limit" ? c.eps.size() : c.steps.size();
        if (points < 3) {
            d.errors.push_back("rate fits need at least 3 points, the grid has " + std::to_string(points));
        }
    }
    return d;
}

// ---------------------------------------------------------------------------

namespace {

struct Outcome {
    bool assertions_ok = true;
    std::vector<std::string> lines;

    void say(const std::string& s) { lines.push_back(s); }
    void fail(const std::string& s) {
        assertions_ok = false;
        lines.push_back("FAIL " + s);
    }
    void pass(const std::string& s) { lines.push_back("ok   " + s); }
};

Vector broadcast(const std::vector<double>& v, int d) {
    Vector out(d);
    for (int j = 0; j < d; ++j) {
        out[j] = v.size() == 1 ? v[0] : v[static_cast<std::size_t>(j)];
    }
    return out;
}

InitialCondition initial_of(const ExperimentConfig& c) {
    auto ic = InitialCondition::make(broadcast(c.q0, c.dimension), broadcast(c.p0, c.dimension));
    if (c.q0_limit) {
        ic.q0_limit = broadcast(*c.q0_limit, c.dimension);
    }
    return ic;
}

std::vector<Scheme> schemes_of(const ExperimentConfig& c) {
    std::vector<Scheme> out;
    for (const auto& s : c.schemes) {
        out.push_back(*parse_scheme(s));
    }
    return out;
}

std::string fmt(double v, int precision = 4) {
    std::ostringstream os;
    os << std::setprecision(precision) << v;
    return os.str();
}

bool in_window(const Assertions& a, double slope) {
    return (!a.slope_min || slope >= *a.slope_min) && (!a.slope_max || slope <= *a.slope_max);
}

std::string window_text(const Assertions& a) {
    return "[" + (a.slope_min ? fmt(*a.slope_min) : std::string("-inf")) + ", " +
           (a.slope_max ? fmt(*a.slope_max) : std::string("inf")) + "]";
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("cannot write " + path.string());
    }
    f << content;
}

std::string errors_csv(const std::vector<ErrorRecord>& records) {
    std::ostringstream os;
    write_error_csv(os, records);
    return os.str();
}

std::string rates_csv(const std::vector<RateSummary>& rows) {
    std::ostringstream os;
    write_rate_csv(os, rows);
    return os.str();
}

RateSummary summarize_fit(const std::vector<ErrorRecord>& group, const std::string& regime, const Assertions& a,
                          Outcome& o) {
    RateSummary row;
    row.model = group.front().model;
    row.scheme = group.front().scheme;
    row.estimator = std::string(estimator_name(group.front().estimator));
    row.test_function = group.front().test_function;
    row.regime = regime;
    row.window_lo = a.slope_min.value_or(-std::numeric_limits<double>::infinity());
    row.window_hi = a.slope_max.value_or(std::numeric_limits<double>::infinity());
    std::vector<ErrorRecord> usable;
    for (const auto& r : group) {
        if (r.value > 0.0) {
            usable.push_back(r);
        }
    }
    const std::string label = row.model + " " + row.scheme + (row.test_function.empty() ? "" : " " + row.test_function) +
                              " " + regime;
    if (usable.size() < 3) {
        row.passed = !(a.slope_min || a.slope_max);
        (row.passed ? o.say("     " + label + ": fewer than 3 nonzero errors, no slope fitted")
                    : o.fail(label + ": fewer than 3 nonzero errors, cannot fit a slope"));
        return row;
    }
    row.fit = fit_rate(usable);
    row.passed = in_window(a, row.fit.slope);
    const std::string text = label + ": slope " + fmt(row.fit.slope) + " (r^2 " + fmt(row.fit.r_squared) +
                             ", window " + window_text(a) + ")";
    (row.passed ? o.pass(text) : o.fail(text));
    return row;
}

// --- commands ----------------------------------------------------------------

void cmd_strong(const ExperimentConfig& c, const fs::path& out_dir, Outcome& o) {
    std::vector<ErrorRecord> all;
    std::vector<RateSummary> rates;
    for (const auto& model_name : c.models) {
        const auto model = make_builtin_model(model_name, c.dimension, c.model_params);
        SweepConfig sc;
        sc.schemes = schemes_of(c);
        for (double e : c.eps) {
            for (std::size_t n : c.steps) {
                sc.points.push_back({e, n});
            }
        }
        sc.horizon = c.horizon;
        sc.refine_ratio = c.refine_ratio;
        sc.bias_samples = c.bias_samples;
        sc.samples = c.samples;
        sc.seed = *c.seed;
        sc.initial = initial_of(c);
        sc.threads = c.threads;
        sc.sup_over_n = c.sup_over_n;
        const auto res = strong_sweep(model, sc);
        for (const auto& w : res.warnings) {
            o.say("warn " + w);
        }
        for (const auto& b : res.bias) {
            o.say("     reference self-convergence at eps=" + fmt(b.eps) + ": " + fmt(b.estimate));
        }
        for (const auto& scheme : c.schemes) {
            for (double e : c.eps) {
                std::vector<ErrorRecord> group;
                for (const auto& r : res.records) {
                    if (r.scheme == scheme && r.eps == e) {
                        group.push_back(r);
                    }
                }
                rates.push_back(summarize_fit(group, "eps=" + format_double(e), c.assertions, o));
            }
            if (c.assertions.uniformity_ratio) {
                for (std::size_t n : c.steps) {
                    const double dt = c.horizon / static_cast<double>(n);
                    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
                    for (const auto& r : res.records) {
                        if (r.scheme == scheme && r.dt == dt) {
                            lo = std::min(lo, r.value);
                            hi = std::max(hi, r.value);
                        }
                    }
                    const double ratio = hi / lo;
                    const std::string text = model_name + " " + scheme + " dt=" + fmt(dt) +
                                             ": max/min over eps " + fmt(ratio) + " (limit " +
                                             fmt(*c.assertions.uniformity_ratio) + ")";
                    (ratio <= *c.assertions.uniformity_ratio ? o.pass(text) : o.fail(text));
                }
            }
        }
        all.insert(all.end(), res.records.begin(), res.records.end());
    }
    write_file(out_dir / "strong-rate.csv", errors_csv(all));
    write_file(out_dir / "strong-rate_rates.csv", rates_csv(rates));
    o.say("     wrote " + std::to_string(all.size()) + " rows to " + (out_dir / "strong-rate.csv").string());
}

void cmd_weak(const ExperimentConfig& c, const fs::path& out_dir, Outcome& o) {
    std::vector<ErrorRecord> all;
    std::vector<RateSummary> rates;
    const bool diagonal = c.eps_mode == "sqrt-dt";
    for (const auto& model_name : c.models) {
        const auto model = make_builtin_model(model_name, c.dimension, c.model_params);
        SweepConfig sc;
        sc.schemes = schemes_of(c);
        if (diagonal) {
            for (std::size_t n : c.steps) {
                sc.points.push_back({std::sqrt(c.horizon / static_cast<double>(n)), n});
            }
        } else {
            for (double e : c.eps) {
                for (std::size_t n : c.steps) {
                    sc.points.push_back({e, n});
                }
            }
        }
        sc.horizon = c.horizon;
        sc.refine_ratio = c.refine_ratio;
        sc.bias_samples = c.bias_samples;
        sc.samples = c.samples;
        sc.seed = *c.seed;
        sc.initial = initial_of(c);
        sc.threads = c.threads;
        sc.sup_over_n = c.sup_over_n;
        sc.resolve_fraction = c.resolve_fraction;
        for (const auto& name : c.test_functions) {
            sc.test_functions.push_back(builtin_test_function(name));
        }
        const auto res = weak_sweep(model, sc);
        for (const auto& w : res.warnings) {
            o.say("warn " + w);
        }
        for (const auto& r : res.records) {
            if (!r.resolved) {
                o.say("warn unresolved: " + r.scheme + " " + r.test_function + " eps=" + fmt(r.eps) + " dt=" +
                      fmt(r.dt) + " value " + fmt(r.value) + " +- " + fmt(r.mc_std_error));
            }
            if (c.assertions.max_relative_se) {
                const double rel = r.value > 0.0 ? r.mc_std_error / r.value : std::numeric_limits<double>::infinity();
                if (rel >= *c.assertions.max_relative_se) {
                    o.fail(r.scheme + " " + r.test_function + " eps=" + fmt(r.eps) + " dt=" + fmt(r.dt) +
                           ": standard error is " + fmt(100.0 * rel) + "% of the value (limit " +
                           fmt(100.0 * *c.assertions.max_relative_se) + "%)");
                }
            }
        }
        for (const auto& scheme : c.schemes) {
            for (const auto& phi : c.test_functions) {
                if (diagonal) {
                    std::vector<ErrorRecord> group;
                    for (const auto& r : res.records) {
                        if (r.scheme == scheme && r.test_function == phi) {
                            group.push_back(r);
                        }
                    }
                    rates.push_back(summarize_fit(group, "eps=sqrt(dt)", c.assertions, o));
                    continue;
                }
                for (double e : c.eps) {
                    std::vector<ErrorRecord> group;
                    for (const auto& r : res.records) {
                        if (r.scheme == scheme && r.test_function == phi && r.eps == e) {
                            group.push_back(r);
                        }
                    }
                    rates.push_back(summarize_fit(group, "eps=" + format_double(e), c.assertions, o));
                }
            }
        }
        all.insert(all.end(), res.records.begin(), res.records.end());
    }
    write_file(out_dir / "weak-rate.csv", errors_csv(all));
    write_file(out_dir / "weak-rate_rates.csv", rates_csv(rates));
    o.say("     wrote " + std::to_string(all.size()) + " rows to " + (out_dir / "weak-rate.csv").string());
}

void cmd_sk_limit(const ExperimentConfig& c, const fs::path& out_dir, Outcome& o) {
    std::vector<ErrorRecord> all;
    std::vector<RateSummary> rates;
    for (const auto& model_name : c.models) {
        const auto model = make_builtin_model(model_name, c.dimension, c.model_params);
        for (std::size_t n : c.steps) {
            SkLimitConfig sc;
            sc.schemes = schemes_of(c);
            sc.eps_grid = c.eps;
            sc.horizon = c.horizon;
            sc.steps = n;
            sc.samples = c.samples;
            sc.seed = *c.seed;
            sc.initial = initial_of(c);
            sc.threads = c.threads;
            const auto recs = sk_limit_error(model, sc);
            for (const auto& scheme : c.schemes) {
                std::vector<ErrorRecord> group;
                for (const auto& r : recs) {
                    if (r.scheme == scheme) {
                        group.push_back(r);
                    }
                }
                rates.push_back(summarize_fit(group, "dt=" + format_double(c.horizon / static_cast<double>(n)),
                                              c.assertions, o));
            }
            all.insert(all.end(), recs.begin(), recs.end());
        }
    }
    write_file(out_dir / "sk-limit.csv", errors_csv(all));
    write_file(out_dir / "sk-limit_rates.csv", rates_csv(rates));
}

void cmd_ap_check(const ExperimentConfig& c, const fs::path& out_dir, Outcome& o) {
    std::ostringstream csv;
    csv << "model,scheme,eps,dt,samples,max_deviation,max_abs_q,pass\n";
    const double tol = c.assertions.tolerance.value_or(1e-6);
    const auto ic = initial_of(c);
    for (const auto& model_name : c.models) {
        const auto model = make_builtin_model(model_name, c.dimension, c.model_params);
        for (double eps : c.eps) {
            for (std::size_t n : c.steps) {
                SimConfig sim;
                sim.eps = eps;
                sim.horizon = c.horizon;
                sim.steps = n;
                sim.initial = ic;
                for (const auto& scheme_name_str : c.schemes) {
                    const Scheme scheme = *parse_scheme(scheme_name_str);
                    double max_dev = 0.0, max_q = 0.0;
                    for (std::size_t m = 0; m < c.samples; ++m) {
                        const auto path = generate_path(*c.seed, m, eps, sim.dt(), n, c.dimension);
                        const auto limit = integrate(Scheme::EulerMaruyama, model, sim, path);
                        const auto traj = integrate(scheme, model, sim, path);
                        for (std::size_t k = 0; k <= n; ++k) {
                            max_dev = std::max(max_dev, (traj.states[k].q - limit.states[k].q).cwiseAbs().maxCoeff());
                            max_q = std::max(max_q, limit.states[k].q.cwiseAbs().maxCoeff());
                        }
                    }
                    const bool ok = max_dev <= tol;
                    csv << model_name << ',' << scheme_name_str << ',' << format_double(eps) << ','
                        << format_double(sim.dt()) << ',' << c.samples << ',' << format_double(max_dev) << ','
                        << format_double(max_q) << ',' << (ok ? "true" : "false") << '\n';
                    const std::string text = model_name + " " + scheme_name_str + " eps=" + fmt(eps) +
                                             ": max deviation from Euler-Maruyama " + fmt(max_dev) + " (limit " +
                                             fmt(tol) + ")";
                    (ok ? o.pass(text) : o.fail(text));
                }
            }
        }
    }
    write_file(out_dir / "ap-check.csv", csv.str());
}

void cmd_moments(const ExperimentConfig& c, const fs::path& out_dir, Outcome& o, bool& blew_up) {
    std::vector<ErrorRecord> all;
    for (const auto& model_name : c.models) {
        const auto model = make_builtin_model(model_name, c.dimension, c.model_params);
        MomentConfig mc;
        mc.schemes = schemes_of(c);
        mc.eps_grid = c.eps;
        mc.steps_grid = c.steps;
        mc.horizon = c.horizon;
        mc.samples = c.samples;
        mc.seed = *c.seed;
        mc.initial = initial_of(c);
        mc.threads = c.threads;
        const auto rows = moment_sweep(model, mc);
        for (const auto& r : rows) {
            if (r.failed) {
                blew_up = true;
                o.fail(model_name + " " + r.scheme + " eps=" + fmt(r.eps) + " dt=" + fmt(r.dt) + ": blow-up");
            }
        }
        for (const auto& scheme : c.schemes) {
            for (std::size_t n : c.steps) {
                const double dt = c.horizon / static_cast<double>(n);
                double q_lo = std::numeric_limits<double>::infinity(), q_hi = 0.0;
                double p_lo = q_lo, p_hi = 0.0;
                for (const auto& r : rows) {
                    if (r.scheme == scheme && r.dt == dt) {
                        q_lo = std::min(q_lo, r.max_q2);
                        q_hi = std::max(q_hi, r.max_q2);
                        p_lo = std::min(p_lo, r.max_p2);
                        p_hi = std::max(p_hi, r.max_p2);
                    }
                }
                const std::string base = model_name + " " + scheme + " dt=" + fmt(dt);
                o.say("     " + base + ": max_n E|q_n|^2 in [" + fmt(q_lo) + ", " + fmt(q_hi) +
                      "], max_n E|p_n|^2 in [" + fmt(p_lo) + ", " + fmt(p_hi) + "] across eps");
                if (c.assertions.moment_ratio) {
                    const double lim = *c.assertions.moment_ratio;
                    const bool ok = std::isfinite(q_hi) && std::isfinite(p_hi) && q_hi <= lim * q_lo && p_hi <= lim * p_lo;
                    const std::string text = base + ": max/min over eps q " + fmt(q_hi / q_lo) + ", p " +
                                             fmt(p_hi / p_lo) + " (limit " + fmt(lim) + ")";
                    (ok ? o.pass(text) : o.fail(text));
                }
            }
        }
        const auto recs = moment_records(model_name, rows, *c.seed);
        all.insert(all.end(), recs.begin(), recs.end());
    }
    write_file(out_dir / "moments.csv", errors_csv(all));
}

void cmd_inequalities(Outcome& o) {
    const auto rep = check_scalar_inequalities();
    const std::string t1 = "sup (1 - e^-tau)/sqrt(tau) = " + fmt(rep.sup_ratio, 12) + " at tau=" + fmt(rep.sup_ratio_tau);
    const std::string t2 = "sup (n+1)((1+tau)^-n - e^-n tau) = " + fmt(rep.sup_weighted_gap, 12) + " at n=" +
                           std::to_string(rep.sup_weighted_gap_n) + ", tau=" + fmt(rep.sup_weighted_gap_tau);
    (rep.sup_ratio <= 1.0 + 1e-12 ? o.pass(t1) : o.fail(t1));
    (rep.sup_weighted_gap <= 1.0 + 1e-12 ? o.pass(t2) : o.fail(t2));
}

void cmd_simulate(const ExperimentConfig& c, const fs::path& out_dir, Outcome& o) {
    std::ostringstream csv;
    csv << "model,scheme,eps,dt,sample,n,t";
    for (int j = 0; j < c.dimension; ++j) {
        csv << ",q" << j + 1;
    }
    for (int j = 0; j < c.dimension; ++j) {
        csv << ",p" << j + 1;
    }
    csv << '\n';
    if (c.emit_paths) {
        fs::create_directories(out_dir / "paths");
    }
    const auto ic = initial_of(c);
    std::size_t rows = 0;
    for (const auto& model_name : c.models) {
        const auto model = make_builtin_model(model_name, c.dimension, c.model_params);
        for (std::size_t ei = 0; ei < c.eps.size(); ++ei) {
            const double eps = c.eps[ei];
            for (std::size_t n : c.steps) {
                SimConfig sim;
                sim.eps = eps;
                sim.horizon = c.horizon;
                sim.steps = n;
                sim.initial = ic;
                for (std::size_t m = 0; m < c.samples; ++m) {
                    const auto path = generate_path(*c.seed, m, eps, sim.dt(), n, c.dimension);
                    if (c.emit_paths) {
                        std::ofstream f(out_dir / "paths" /
                                            ("path_e" + std::to_string(ei) + "_n" + std::to_string(n) + "_s" +
                                             std::to_string(m) + ".bin"),
                                        std::ios::binary);
                        write_path_binary(f, path);
                    }
                    for (const auto& scheme : c.schemes) {
                        const auto traj = integrate(*parse_scheme(scheme), model, sim, path);
                        for (std::size_t k = 0; k < traj.states.size(); ++k) {
                            csv << model_name << ',' << scheme << ',' << format_double(eps) << ','
                                << format_double(sim.dt()) << ',' << m << ',' << k << ',' << format_double(traj.time(k));
                            for (int j = 0; j < c.dimension; ++j) {
                                csv << ',' << format_double(traj.states[k].q[j]);
                            }
                            for (int j = 0; j < c.dimension; ++j) {
                                csv << ',' << format_double(traj.states[k].p[j]);
                            }
                            csv << '\n';
                            ++rows;
                        }
                    }
                }
            }
        }
    }
    write_file(out_dir / "simulate.csv", csv.str());
    o.say("     wrote " + std::to_string(rows) + " trajectory rows to " + (out_dir / "simulate.csv").string());
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Asymptotic-preserving integrators for Smoluchowski-Kramers SDEs: experiment runner"};
    std::string command;
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
    std::optional<std::string> out_dir;
    std::optional<std::size_t> samples;
    app.add_option("command", command, "Command: " + join(command_names()))
        ->required()
        ->check(CLI::IsMember(command_names()));
    app.add_option("--config", config_path, "JSON config file (overrides the command preset)");
    app.add_option("--seed", seed, "Master seed (U64)");
    app.add_option("--threads", threads, "Worker threads; results do not depend on it");
    app.add_option("--out", out_dir, "Output directory");
    app.add_option("--samples", samples, "Override the Monte Carlo sample count");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << e.what() << '\n';
        return kExitConfig;
    }

    Diagnostics diag;
    ExperimentConfig config = default_config(command);
    if (!config_path.empty()) {
        std::ifstream f(config_path);
        if (!f) {
            err << "error: cannot open config file " << config_path << '\n';
            return kExitConfig;
        }
        json j;
        try {
            j = json::parse(f, nullptr, true, true);
        } catch (const json::parse_error& e) {
            err << "error: " << config_path << ": " << e.what() << '\n';
            return kExitConfig;
        }
        config = parse_config(j, command, diag);
    } else if (command == "validate") {
        err << "error: validate needs --config\n";
        return kExitConfig;
    }
    if (command != "validate") {
        config.command = command;
    }
    if (seed) config.seed = *seed;
    if (threads) config.threads = *threads;
    if (out_dir) config.out_dir = *out_dir;
    if (samples) config.samples = *samples;

    const auto checked = validate_config(config);
    diag.errors.insert(diag.errors.end(), checked.errors.begin(), checked.errors.end());
    diag.warnings.insert(diag.warnings.end(), checked.warnings.begin(), checked.warnings.end());
    for (const auto& w : diag.warnings) {
        err << "warning: " << w << '\n';
    }
    for (const auto& e : diag.errors) {
        err << "error: " << e << '\n';
    }
    if (!diag.ok()) {
        return kExitConfig;
    }
    if (command == "validate") {
        out << "config OK for command '" << config.command << "'\n";
        return kExitOk;
    }

    Outcome outcome;
    bool blew_up = false;
    const fs::path dir(config.out_dir);
    try {
        if (command != "inequalities") {
            fs::create_directories(dir);
        }
        if (command == "strong-rate") {
            cmd_strong(config, dir, outcome);
        } else if (command == "weak-rate") {
            cmd_weak(config, dir, outcome);
        } else if (command == "sk-limit") {
            cmd_sk_limit(config, dir, outcome);
        } else if (command == "ap-check") {
            cmd_ap_check(config, dir, outcome);
        } else if (command == "moments") {
            cmd_moments(config, dir, outcome, blew_up);
        } else if (command == "inequalities") {
            cmd_inequalities(outcome);
        } else if (command == "simulate") {
            cmd_simulate(config, dir, outcome);
        }
    } catch (const IntegrationError& e) {
        err << "numerical blow-up: " << e.what() << '\n';
        return kExitBlowUp;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kExitConfig;
    }

    std::ostringstream summary;
    summary << command << " (seed " << (config.seed ? std::to_string(*config.seed) : "-") << ", samples "
            << config.samples << ")\n";
    for (const auto& line : outcome.lines) {
        summary << line << '\n';
    }
    summary << (outcome.assertions_ok && !blew_up ? "PASS" : "FAIL") << '\n';
    out << summary.str();
    if (command != "inequalities") {
        write_file(dir / (command + "_summary.txt"), summary.str());
    }
    if (blew_up) {
        return kExitBlowUp;
    }
    return outcome.assertions_ok ? kExitOk : kExitAssertion;
}

}  // namespace apsk::cli
