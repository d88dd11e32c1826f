#pragma once

#include "apsk/model.hpp"
#include "apsk/schemes.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace apsk {

enum class Estimator { StrongL2, Weak, SkLimit, Moment };

std::string_view estimator_name(Estimator e);

/// One Monte Carlo estimate on one (eps, dt) point.
struct ErrorRecord {
    std::string model;
    std::string scheme;
    Estimator estimator = Estimator::StrongL2;
    std::string test_function;  // empty unless weak or moment
    double eps = 0.0;
    double dt = 0.0;
    double value = 0.0;         // nonnegative
    double signed_value = 0.0;  // weak: the signed mean difference
    double mc_std_error = 0.0;
    std::size_t samples = 0;
    std::uint64_t seed = 0;
    bool resolved = true;       // weak: standard error below the configured fraction of value
    bool failed = false;        // a trajectory blew up
};

struct RateFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
    std::vector<std::pair<double, double>> points;  // (log x, log value)
};

/// Smooth test function with bounded derivatives of order 1 to 3.
struct TestFunction {
    std::string name;
    std::function<double(const Vector&)> eval;
};

/// "clipped-q1" q1 / sqrt(1 + (q1/5)^2); "tanh-q1" tanh(q1); "cos-sum" cos(sum_i q_i).
TestFunction builtin_test_function(const std::string& name);
const std::vector<std::string>& builtin_test_function_names();

/// Grid of coarse step counts at one or more eps values, all sharing one
/// horizon. Points with equal eps share one fine path per sample.
struct SweepPoint {
    double eps;
    std::size_t steps;
};

struct SweepConfig {
    std::vector<Scheme> schemes;
    std::vector<SweepPoint> points;
    double horizon = 1.0;
    std::size_t refine_ratio = 64;
    std::size_t samples = 1000;
    std::uint64_t seed = 0;
    InitialCondition initial;
    unsigned threads = 1;
    bool sup_over_n = false;
    /// Weak only: a record is resolved when its standard error is below
    /// this fraction of its absolute value.
    double resolve_fraction = 0.2;
    std::vector<TestFunction> test_functions;  // weak only
    /// Samples used for the reference self-convergence estimate; 0 means all.
    std::size_t bias_samples = 0;
};

/// Self-convergence of the fine reference for one eps: the terminal-time
/// discrepancy between the reference and the reference on a grid twice as
/// coarse (RMS for strong, |mean difference| for weak).
struct ReferenceBias {
    double eps;
    std::string test_function;
    double estimate;
};

struct SweepResult {
    std::vector<ErrorRecord> records;
    std::vector<ReferenceBias> bias;
    std::vector<std::string> warnings;
};

/// Strong L2 error of q at the terminal time (or the max over grid times
/// when sup_over_n), against the fine exponential reference driven by the
/// same Brownian path.
SweepResult strong_sweep(const ModelSpec& model, const SweepConfig& config);

/// Coupled-difference estimate of E[phi(q_N)] - E[phi(q_ref)].
SweepResult weak_sweep(const ModelSpec& model, const SweepConfig& config);

/// Single-point conveniences over the sweeps.
ErrorRecord strong_error(const ModelSpec& model, Scheme scheme, double eps, double horizon, std::size_t steps,
                         std::size_t refine_ratio, std::size_t samples, std::uint64_t seed,
                         const InitialCondition& initial, unsigned threads = 1, bool sup_over_n = false);
ErrorRecord weak_error(const ModelSpec& model, Scheme scheme, const TestFunction& phi, double eps, double horizon,
                       std::size_t steps, std::size_t refine_ratio, std::size_t samples, std::uint64_t seed,
                       const InitialCondition& initial, unsigned threads = 1);

/// (eps/dt) * int_0^dt (1 - exp(-t/eps^2)) dt, in closed form.
double residual_R(double eps, double dt);

struct SkLimitConfig {
    std::vector<Scheme> schemes{Scheme::SemiImplicit, Scheme::Exponential};
    std::vector<double> eps_grid;
    double horizon = 1.0;
    std::size_t steps = 1024;
    std::size_t samples = 1000;
    std::uint64_t seed = 0;
    InitialCondition initial;
    unsigned threads = 1;
};

/// Terminal L2 distance between each eps-scheme and Euler-Maruyama on the
/// limiting equation, both driven by the same increments.
std::vector<ErrorRecord> sk_limit_error(const ModelSpec& model, const SkLimitConfig& config);

struct MomentConfig {
    std::vector<Scheme> schemes{Scheme::SemiImplicit, Scheme::Exponential};
    std::vector<double> eps_grid;
    std::vector<std::size_t> steps_grid;
    double horizon = 1.0;
    std::size_t samples = 1000;
    std::uint64_t seed = 0;
    InitialCondition initial;
    unsigned threads = 1;
};

struct MomentRow {
    std::string scheme;
    double eps;
    double dt;
    double max_q2;  // max_n of the sample mean of |q_n|^2
    double max_p2;  // max_n of the sample mean of |p_n|^2
    std::vector<double> mean_q2;  // per grid time
    std::vector<double> mean_p2;
    std::size_t samples;
    bool failed;
};

std::vector<MomentRow> moment_sweep(const ModelSpec& model, const MomentConfig& config);
std::vector<ErrorRecord> moment_records(const std::string& model_name, const std::vector<MomentRow>& rows,
                                        std::uint64_t seed);

/// OLS of log(value) on log(dt), or on log(eps) for sk-limit records.
RateFit fit_rate(const std::vector<ErrorRecord>& records);
RateFit fit_loglog(const std::vector<double>& x, const std::vector<double>& y);

struct InequalityReport {
    double sup_ratio;         // sup_tau (1 - e^{-tau}) / sqrt(tau)
    double sup_ratio_tau;
    double sup_weighted_gap;  // sup_{n, tau} (n+1) ((1+tau)^{-n} - e^{-n tau})
    double sup_weighted_gap_tau;
    int sup_weighted_gap_n;
    bool passed;              // both suprema <= 1 + 1e-12
};

InequalityReport check_scalar_inequalities();

/// CSV with header model,scheme,estimator,test_function,eps,dt,value,mc_std_error,samples,seed.
void write_error_csv(std::ostream& out, const std::vector<ErrorRecord>& records);

struct RateSummary {
    std::string model;
    std::string scheme;
    std::string estimator;
    std::string test_function;
    std::string regime;
    RateFit fit;
    double window_lo;
    double window_hi;
    bool passed;
};

void write_rate_csv(std::ostream& out, const std::vector<RateSummary>& rows);

/// Shortest round-trip decimal for a double, identical on every platform.
std::string format_double(double v);

}  // namespace apsk
