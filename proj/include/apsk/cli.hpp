#pragma once

#include "apsk/harness.hpp"
#include "apsk/model.hpp"
#include "apsk/schemes.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace apsk::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitAssertion = 3;
inline constexpr int kExitBlowUp = 4;

const std::vector<std::string>& command_names();

/// Thresholds checked after an experiment; unset fields are not checked.
struct Assertions {
    std::optional<double> slope_min;
    std::optional<double> slope_max;
    std::optional<double> uniformity_ratio;  // strong: max/min over eps, per dt
    std::optional<double> max_relative_se;   // weak: mc_std_error / value
    std::optional<double> moment_ratio;      // moments: max/min over eps, per dt
    std::optional<double> tolerance;         // ap-check: sup-norm deviation
};

struct ExperimentConfig {
    std::string command;
    std::vector<std::string> models{"tanh-diffusion"};
    int dimension = 1;
    ModelParams model_params;
    std::vector<std::string> schemes{"semi-implicit"};
    std::vector<double> eps;
    std::string eps_mode = "grid";  // "grid" or "sqrt-dt"
    double horizon = 1.0;
    std::vector<std::size_t> steps;
    std::size_t refine_ratio = 64;
    std::size_t bias_samples = 0;  // 0: all samples
    std::size_t samples = 1000;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> test_functions{"tanh-q1"};
    std::vector<double> q0{0.0};
    std::vector<double> p0{0.0};
    std::optional<std::vector<double>> q0_limit;
    bool sup_over_n = false;
    bool emit_paths = false;
    double resolve_fraction = 0.2;
    std::string out_dir = "out";
    unsigned threads = 1;
    Assertions assertions;
};

struct Diagnostics {
    std::vector<std::string> errors;
    std::vector<std::string> warnings;

    bool ok() const { return errors.empty(); }
};

/// Built-in preset for a command; the presets reproduce the documented
/// acceptance experiments.
ExperimentConfig default_config(const std::string& command);

/// Reads a JSON config; `command` selects the preset the file overrides.
/// Unknown keys and type mismatches land in `diag.errors`.
ExperimentConfig parse_config(const nlohmann::json& j, const std::string& command, Diagnostics& diag);

/// Grid invariants, seed presence, model/scheme/test-function resolution.
Diagnostics validate_config(const ExperimentConfig& config);

/// Full front end: argv without the program name. Writes CSVs into the out
/// directory and a human-readable summary to `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace apsk::cli
