#include "apsk/harness.hpp"

#include "apsk/errors.hpp"
#include "apsk/parallel.hpp"
#include "apsk/stepper.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

namespace apsk {

std::string_view estimator_name(Estimator e) {
    switch (e) {
        case Estimator::StrongL2: return "strong-L2";
        case Estimator::Weak: return "weak";
        case Estimator::SkLimit: return "sk-limit";
        case Estimator::Moment: return "moment";
    }
    return "unknown";
}

const std::vector<std::string>& builtin_test_function_names() {
    static const std::vector<std::string> names{"clipped-q1", "tanh-q1", "cos-sum"};
    return names;
}

TestFunction builtin_test_function(const std::string& name) {
    if (name == "clipped-q1") {
        return {name, [](const Vector& q) {
                    const double x = q[0] / 5.0;
                    return q[0] / std::sqrt(1.0 + x * x);
                }};
    }
    if (name == "tanh-q1") {
        return {name, [](const Vector& q) { return std::tanh(q[0]); }};
    }
    if (name == "cos-sum") {
        return {name, [](const Vector& q) { return std::cos(q.sum()); }};
    }
    std::string valid;
    for (const auto& n : builtin_test_function_names()) {
        valid += (valid.empty() ? "" : ", ") + n;
    }
    throw UsageError("unknown test function '" + name + "' (valid: " + valid + ")");
}

double residual_R(double eps, double dt) {
    if (!(eps > 0.0) || !(dt > 0.0)) {
        throw UsageError("residual_R: eps and dt must be positive");
    }
    // eps - (eps^3/dt)(1 - e^{-x}) with x = dt/eps^2, rearranged so that the
    // small-x cancellation happens inside x_minus_one_minus_exp_neg.
    const double x = dt / (eps * eps);
    if (x > 1.0) {
        return eps * (1.0 - one_minus_exp_neg(x) / x);
    }
    return eps / x * x_minus_one_minus_exp_neg(x);
}

namespace {

struct Moments {
    double mean;
    double variance;  // unbiased sample variance
};

Moments moments_from_sums(double sum, double sum_sq, std::size_t count) {
    const double m = static_cast<double>(count);
    const double mean = sum / m;
    double var = 0.0;
    if (count > 1) {
        var = std::max(0.0, (sum_sq - m * mean * mean) / (m - 1.0));
    }
    return {mean, var};
}

void add_into(std::vector<double>& into, const std::vector<double>& from) {
    for (std::size_t i = 0; i < into.size(); ++i) {
        into[i] += from[i];
    }
}

std::string eps_context(double eps, double dt, std::size_t sample) {
    std::ostringstream os;
    os << "eps=" << eps << ", dt=" << dt << ", sample=" << sample;
    return os.str();
}

void check_sample_count(std::size_t samples) {
    if (samples < 2) {
        throw UsageError("need at least 2 Monte Carlo samples");
    }
}

// ---------------------------------------------------------------------------
// Strong and weak sweeps.

enum class SweepKind { Strong, Weak };

struct Level {
    std::size_t steps;
    std::size_t ratio_from_top;
};

struct EpsGroup {
    double eps;
    std::size_t top_steps;
    std::size_t fine_steps;
    std::vector<Level> levels;  // sorted by decreasing steps
};

struct Scratch {
    NoisePath fine;
    NoisePath half;
    NoisePath top;
    NoisePath level;
    std::vector<Vector> ref_q;
};

class SweepRunner {
public:
    SweepRunner(SweepKind kind, const ModelSpec& model, const SweepConfig& config)
        : kind_(kind), model_(model), cfg_(config) {
        validate();
        build_groups();
    }

    SweepResult run() {
        SweepResult result;
        for (std::size_t g = 0; g < groups_.size(); ++g) {
            run_group(g, result);
        }
        order_records(result);
        return result;
    }

private:
    std::size_t phi_count() const { return kind_ == SweepKind::Strong ? 1 : cfg_.test_functions.size(); }

    void validate() const {
        if (cfg_.schemes.empty()) {
            throw UsageError("sweep: no schemes");
        }
        if (cfg_.points.empty()) {
            throw UsageError("sweep: no (eps, N) points");
        }
        if (!(cfg_.horizon > 0.0)) {
            throw UsageError("sweep: horizon must be positive");
        }
        if (cfg_.refine_ratio < 1) {
            throw UsageError("sweep: refine_ratio must be at least 1");
        }
        check_sample_count(cfg_.samples);
        if (kind_ == SweepKind::Weak && cfg_.test_functions.empty()) {
            throw UsageError("weak sweep: no test functions");
        }
        for (const auto& p : cfg_.points) {
            if (!(p.eps > 0.0) || p.steps < 1) {
                throw UsageError("sweep: every point needs eps > 0 and N >= 1");
            }
        }
        if (cfg_.initial.q0.size() != model_.dimension) {
            throw UsageError("sweep: initial condition dimension does not match the model");
        }
    }

    void build_groups() {
        for (const auto& p : cfg_.points) {
            auto it = std::find_if(groups_.begin(), groups_.end(), [&](const EpsGroup& g) { return g.eps == p.eps; });
            if (it == groups_.end()) {
                groups_.push_back({p.eps, 0, 0, {}});
                it = groups_.end() - 1;
            }
            if (std::none_of(it->levels.begin(), it->levels.end(), [&](const Level& l) { return l.steps == p.steps; })) {
                it->levels.push_back({p.steps, 0});
            }
        }
        for (auto& g : groups_) {
            std::sort(g.levels.begin(), g.levels.end(), [](const Level& a, const Level& b) { return a.steps > b.steps; });
            g.top_steps = g.levels.front().steps;
            g.fine_steps = g.top_steps * cfg_.refine_ratio;
            for (auto& l : g.levels) {
                if (g.top_steps % l.steps != 0) {
                    throw UsageError("sweep: N=" + std::to_string(l.steps) + " does not divide the finest N=" +
                                     std::to_string(g.top_steps) + " at the same eps");
                }
                l.ratio_from_top = g.top_steps / l.steps;
            }
        }
    }

    // Flat accumulator layout per group: for each (level, scheme, phi) a run of
    // `slots` pairs (sum, sum of squares), followed by phi_count() bias pairs.
    std::size_t slots(const Level& l) const { return cfg_.sup_over_n ? l.steps + 1 : 1; }

    std::vector<std::size_t> offsets(const EpsGroup& g, std::size_t& total) const {
        std::vector<std::size_t> off;
        total = 0;
        for (const auto& l : g.levels) {
            for (std::size_t s = 0; s < cfg_.schemes.size(); ++s) {
                for (std::size_t k = 0; k < phi_count(); ++k) {
                    off.push_back(total);
                    total += 2 * slots(l);
                }
            }
        }
        return off;
    }

    std::size_t slot_index(std::size_t level, std::size_t scheme, std::size_t phi) const {
        return (level * cfg_.schemes.size() + scheme) * phi_count() + phi;
    }

    void run_group(std::size_t gi, SweepResult& result) {
        const EpsGroup& g = groups_[gi];
        const double eps = g.eps;
        const double fine_dt = cfg_.horizon / static_cast<double>(g.fine_steps);
        const bool check_bias = g.fine_steps % 2 == 0 && g.fine_steps > 1;
        std::size_t total = 0;
        const auto off = offsets(g, total);
        const std::size_t bias_offset = total;
        total += 2 * phi_count();

        const Stepper reference(Scheme::Exponential, model_, eps, fine_dt);
        std::optional<Stepper> reference_half;
        if (check_bias) {
            reference_half.emplace(Scheme::Exponential, model_, eps, 2.0 * fine_dt);
        }
        std::vector<Stepper> steppers;
        for (const auto& l : g.levels) {
            for (Scheme s : cfg_.schemes) {
                steppers.emplace_back(s, model_, eps, cfg_.horizon / static_cast<double>(l.steps));
            }
        }

        const std::size_t bias_count =
            check_bias ? (cfg_.bias_samples == 0 ? cfg_.samples : std::min(cfg_.bias_samples, cfg_.samples)) : 0;

        auto body = [&](std::vector<double>& acc, std::size_t begin, std::size_t end) {
            thread_local std::array<Scratch, kLanes> scratch;
            for (std::size_t first = begin; first < end; first += kLanes) {
                const std::size_t lanes = std::min(kLanes, end - first);
                run_lane_group(g, first, lanes, scratch, reference, reference_half, steppers, off, bias_offset,
                               bias_count, acc);
            }
        };

        const auto sums = blocked_reduce<std::vector<double>>(
            cfg_.samples, cfg_.threads, [&] { return std::vector<double>(total, 0.0); }, body, add_into);

        emit_records(g, off, sums, result);

        if (check_bias) {
            for (std::size_t k = 0; k < phi_count(); ++k) {
                const auto mo = moments_from_sums(sums[bias_offset + 2 * k], sums[bias_offset + 2 * k + 1], bias_count);
                const double estimate = kind_ == SweepKind::Strong ? std::sqrt(mo.mean) : std::abs(mo.mean);
                const std::string phi_name = kind_ == SweepKind::Weak ? cfg_.test_functions[k].name : "";
                result.bias.push_back({eps, phi_name, estimate});
                double smallest = std::numeric_limits<double>::infinity();
                for (const auto& r : result.records) {
                    if (r.eps == eps && r.test_function == phi_name && r.value > 0.0) {
                        smallest = std::min(smallest, r.value);
                    }
                }
                if (std::isfinite(smallest) && estimate >= smallest / 3.0) {
                    std::ostringstream os;
                    os << "reference bias at eps=" << eps << (phi_name.empty() ? "" : " (" + phi_name + ")")
                       << " is " << estimate << ", not below a third of the smallest measured error " << smallest
                       << "; increase refine_ratio";
                    result.warnings.push_back(os.str());
                }
            }
        }
    }

    static constexpr std::size_t kLanes = 8;

    // Samples first .. first+lanes-1: fine paths and references run in
    // lock-step, then each sample's contributions are added in index order.
    void run_lane_group(const EpsGroup& g, std::size_t first, std::size_t lanes, std::array<Scratch, kLanes>& sc,
                        const Stepper& reference, const std::optional<Stepper>& reference_half,
                        const std::vector<Stepper>& steppers, const std::vector<std::size_t>& off,
                        std::size_t bias_offset, std::size_t bias_count, std::vector<double>& acc) const {
        const double eps = g.eps;
        const double fine_dt = cfg_.horizon / static_cast<double>(g.fine_steps);
        std::array<const NoisePath*, kLanes> fine_ptrs{};
        for (std::size_t k = 0; k < lanes; ++k) {
            generate_path_into(sc[k].fine, cfg_.seed, first + k, eps, fine_dt, g.fine_steps, model_.dimension);
            sc[k].ref_q.resize(g.top_steps + 1);
            fine_ptrs[k] = &sc[k].fine;
        }
        reference.run_lanes(
            cfg_.initial, std::span<const NoisePath* const>(fine_ptrs.data(), lanes),
            [&](std::size_t k, std::size_t n, const Vector& a, const Vector&) {
                if (n % cfg_.refine_ratio == 0) {
                    sc[k].ref_q[n / cfg_.refine_ratio] = a;
                }
            },
            [&](std::size_t k) { return "reference, " + eps_context(eps, fine_dt, first + k); });

        // Reference on the grid twice as coarse, for the bias estimate.
        std::array<Vector, kLanes> half_terminal;
        std::size_t bias_lanes = 0;
        while (bias_lanes < lanes && first + bias_lanes < bias_count) {
            ++bias_lanes;
        }
        if (bias_lanes > 0) {
            std::array<const NoisePath*, kLanes> half_ptrs{};
            for (std::size_t k = 0; k < bias_lanes; ++k) {
                coarsen_path_into(sc[k].half, sc[k].fine, 2, eps);
                half_ptrs[k] = &sc[k].half;
            }
            const std::size_t half_steps = g.fine_steps / 2;
            reference_half->run_lanes(
                cfg_.initial, std::span<const NoisePath* const>(half_ptrs.data(), bias_lanes),
                [&](std::size_t k, std::size_t n, const Vector& a, const Vector&) {
                    if (n == half_steps) {
                        half_terminal[k] = a;
                    }
                },
                [&](std::size_t k) { return "half reference, " + eps_context(eps, 2 * fine_dt, first + k); });
        }

        for (std::size_t k = 0; k < lanes; ++k) {
            const std::size_t m = first + k;
            Scratch& s = sc[k];
            const Vector& ref_terminal = s.ref_q[g.top_steps];
            if (k < bias_lanes) {
                for (std::size_t j = 0; j < phi_count(); ++j) {
                    const double x = kind_ == SweepKind::Strong
                                         ? (ref_terminal - half_terminal[k]).squaredNorm()
                                         : cfg_.test_functions[j].eval(ref_terminal) -
                                               cfg_.test_functions[j].eval(half_terminal[k]);
                    acc[bias_offset + 2 * j] += x;
                    acc[bias_offset + 2 * j + 1] += x * x;
                }
            }

            if (cfg_.refine_ratio == 1) {
                s.top = s.fine;
            } else {
                coarsen_path_into(s.top, s.fine, cfg_.refine_ratio, eps);
            }

            for (std::size_t li = 0; li < g.levels.size(); ++li) {
                const Level& l = g.levels[li];
                const NoisePath* path = &s.top;
                if (l.ratio_from_top > 1) {
                    coarsen_path_into(s.level, s.top, l.ratio_from_top, eps);
                    path = &s.level;
                }
                if (path->origin_checksum != s.fine.origin_checksum) {
                    throw InternalError("coupling check failed: coarse and fine paths do not share increments");
                }
                for (std::size_t si = 0; si < cfg_.schemes.size(); ++si) {
                    const Stepper& st = steppers[li * cfg_.schemes.size() + si];
                    auto visit = [&](std::size_t n, const Vector& a, const Vector& b) {
                        if (!cfg_.sup_over_n && n != l.steps) {
                            return;
                        }
                        const std::size_t slot = cfg_.sup_over_n ? n : 0;
                        const Vector q = st.position(a, b);
                        const Vector& qr = s.ref_q[n * l.ratio_from_top];
                        for (std::size_t j = 0; j < phi_count(); ++j) {
                            const double x = kind_ == SweepKind::Strong
                                                 ? (q - qr).squaredNorm()
                                                 : cfg_.test_functions[j].eval(q) - cfg_.test_functions[j].eval(qr);
                            const std::size_t base = off[slot_index(li, si, j)] + 2 * slot;
                            acc[base] += x;
                            acc[base + 1] += x * x;
                        }
                    };
                    try {
                        st.run(cfg_.initial, *path, visit);
                    } catch (const IntegrationError& e) {
                        throw IntegrationError(std::string(scheme_name(cfg_.schemes[si])) + ": " + e.what(), e.step(),
                                               eps_context(eps, path->dt, m));
                    }
                }
            }
        }
    }

    void emit_records(const EpsGroup& g, const std::vector<std::size_t>& off, const std::vector<double>& sums,
                      SweepResult& result) const {
        for (std::size_t li = 0; li < g.levels.size(); ++li) {
            const Level& l = g.levels[li];
            for (std::size_t si = 0; si < cfg_.schemes.size(); ++si) {
                for (std::size_t k = 0; k < phi_count(); ++k) {
                    const std::size_t base = off[slot_index(li, si, k)];
                    // Pick the grid time with the largest estimate (only one slot
                    // unless sup_over_n).
                    double best_value = -1.0;
                    Moments best{0.0, 0.0};
                    for (std::size_t slot = 0; slot < slots(l); ++slot) {
                        const auto mo = moments_from_sums(sums[base + 2 * slot], sums[base + 2 * slot + 1], cfg_.samples);
                        const double v = kind_ == SweepKind::Strong ? mo.mean : std::abs(mo.mean);
                        if (v > best_value) {
                            best_value = v;
                            best = mo;
                        }
                    }
                    ErrorRecord r;
                    r.model = model_.name;
                    r.scheme = std::string(scheme_name(cfg_.schemes[si]));
                    r.eps = g.eps;
                    r.dt = cfg_.horizon / static_cast<double>(l.steps);
                    r.samples = cfg_.samples;
                    r.seed = cfg_.seed;
                    const double m = static_cast<double>(cfg_.samples);
                    const double se_mean = std::sqrt(best.variance / m);
                    if (kind_ == SweepKind::Strong) {
                        r.estimator = Estimator::StrongL2;
                        r.value = std::sqrt(best.mean);
                        r.signed_value = r.value;
                        // Delta method for the square root of a mean.
                        r.mc_std_error = r.value > 0.0 ? se_mean / (2.0 * r.value) : 0.0;
                    } else {
                        r.estimator = Estimator::Weak;
                        r.test_function = cfg_.test_functions[k].name;
                        r.value = std::abs(best.mean);
                        r.signed_value = best.mean;
                        r.mc_std_error = se_mean;
                        r.resolved = r.mc_std_error < cfg_.resolve_fraction * r.value;
                    }
                    result.records.push_back(std::move(r));
                }
            }
        }
    }

    // Scheme-major, then test function, then the caller's point order.
    void order_records(SweepResult& result) const {
        std::vector<ErrorRecord> ordered;
        ordered.reserve(result.records.size());
        for (Scheme s : cfg_.schemes) {
            for (std::size_t k = 0; k < phi_count(); ++k) {
                const std::string phi = kind_ == SweepKind::Weak ? cfg_.test_functions[k].name : "";
                for (const auto& p : cfg_.points) {
                    const double dt = cfg_.horizon / static_cast<double>(p.steps);
                    for (const auto& r : result.records) {
                        if (r.scheme == scheme_name(s) && r.test_function == phi && r.eps == p.eps && r.dt == dt) {
                            ordered.push_back(r);
                            break;
                        }
                    }
                }
            }
        }
        result.records = std::move(ordered);
    }

    SweepKind kind_;
    const ModelSpec& model_;
    const SweepConfig& cfg_;
    std::vector<EpsGroup> groups_;
};

}  // namespace

SweepResult strong_sweep(const ModelSpec& model, const SweepConfig& config) {
    return SweepRunner(SweepKind::Strong, model, config).run();
}

SweepResult weak_sweep(const ModelSpec& model, const SweepConfig& config) {
    return SweepRunner(SweepKind::Weak, model, config).run();
}

ErrorRecord strong_error(const ModelSpec& model, Scheme scheme, double eps, double horizon, std::size_t steps,
                         std::size_t refine_ratio, std::size_t samples, std::uint64_t seed,
                         const InitialCondition& initial, unsigned threads, bool sup_over_n) {
    SweepConfig cfg;
    cfg.schemes = {scheme};
    cfg.points = {{eps, steps}};
    cfg.horizon = horizon;
    cfg.refine_ratio = refine_ratio;
    cfg.samples = samples;
    cfg.seed = seed;
    cfg.initial = initial;
    cfg.threads = threads;
    cfg.sup_over_n = sup_over_n;
    return strong_sweep(model, cfg).records.front();
}

ErrorRecord weak_error(const ModelSpec& model, Scheme scheme, const TestFunction& phi, double eps, double horizon,
                       std::size_t steps, std::size_t refine_ratio, std::size_t samples, std::uint64_t seed,
                       const InitialCondition& initial, unsigned threads) {
    SweepConfig cfg;
    cfg.schemes = {scheme};
    cfg.points = {{eps, steps}};
    cfg.horizon = horizon;
    cfg.refine_ratio = refine_ratio;
    cfg.samples = samples;
    cfg.seed = seed;
    cfg.initial = initial;
    cfg.threads = threads;
    cfg.test_functions = {phi};
    return weak_sweep(model, cfg).records.front();
}

// ---------------------------------------------------------------------------

std::vector<ErrorRecord> sk_limit_error(const ModelSpec& model, const SkLimitConfig& config) {
    if (config.eps_grid.empty() || config.schemes.empty()) {
        throw UsageError("sk_limit_error: empty eps grid or scheme list");
    }
    if (config.steps < 1 || !(config.horizon > 0.0)) {
        throw UsageError("sk_limit_error: need N >= 1 and T > 0");
    }
    check_sample_count(config.samples);
    const double dt = config.horizon / static_cast<double>(config.steps);
    const std::size_t ns = config.schemes.size();
    const std::size_t total = 2 * ns * config.eps_grid.size();

    std::vector<Stepper> steppers;
    for (double eps : config.eps_grid) {
        for (Scheme s : config.schemes) {
            steppers.emplace_back(s, model, eps, dt);
        }
    }
    const Stepper limit(Scheme::EulerMaruyama, model, 1.0, dt);

    auto sample = [&](std::vector<double>& acc, std::size_t m, NoisePath& path) {
        for (std::size_t e = 0; e < config.eps_grid.size(); ++e) {
            const double eps = config.eps_grid[e];
            generate_path_into(path, config.seed, m, eps, dt, config.steps, model.dimension);
            Vector q_limit;
            limit.run(config.initial, path, [&](std::size_t n, const Vector& a, const Vector&) {
                if (n == config.steps) {
                    q_limit = a;
                }
            });
            for (std::size_t s = 0; s < ns; ++s) {
                const Stepper& st = steppers[e * ns + s];
                Vector q;
                try {
                    st.run(config.initial, path, [&](std::size_t n, const Vector& a, const Vector& b) {
                        if (n == config.steps) {
                            q = st.position(a, b);
                        }
                    });
                } catch (const IntegrationError& err) {
                    throw IntegrationError(err.what(), err.step(), eps_context(eps, dt, m));
                }
                const double x = (q - q_limit).squaredNorm();
                acc[2 * (e * ns + s)] += x;
                acc[2 * (e * ns + s) + 1] += x * x;
            }
        }
    };
    auto body = [&](std::vector<double>& acc, std::size_t begin, std::size_t end) {
        thread_local NoisePath path;
        for (std::size_t m = begin; m < end; ++m) {
            sample(acc, m, path);
        }
    };

    const auto sums = blocked_reduce<std::vector<double>>(
        config.samples, config.threads, [&] { return std::vector<double>(total, 0.0); }, body, add_into);

    std::vector<ErrorRecord> out;
    for (std::size_t s = 0; s < ns; ++s) {
        for (std::size_t e = 0; e < config.eps_grid.size(); ++e) {
            const auto mo = moments_from_sums(sums[2 * (e * ns + s)], sums[2 * (e * ns + s) + 1], config.samples);
            ErrorRecord r;
            r.model = model.name;
            r.scheme = std::string(scheme_name(config.schemes[s]));
            r.estimator = Estimator::SkLimit;
            r.eps = config.eps_grid[e];
            r.dt = dt;
            r.value = std::sqrt(mo.mean);
            r.signed_value = r.value;
            const double se_mean = std::sqrt(mo.variance / static_cast<double>(config.samples));
            r.mc_std_error = r.value > 0.0 ? se_mean / (2.0 * r.value) : 0.0;
            r.samples = config.samples;
            r.seed = config.seed;
            out.push_back(std::move(r));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

std::vector<MomentRow> moment_sweep(const ModelSpec& model, const MomentConfig& config) {
    if (config.eps_grid.empty() || config.steps_grid.empty() || config.schemes.empty()) {
        throw UsageError("moment_sweep: empty grid or scheme list");
    }
    check_sample_count(config.samples);
    struct Cell {
        double eps;
        std::size_t steps;
        std::size_t scheme;
        std::size_t offset;
    };
    std::vector<Cell> cells;
    std::size_t total = 0;
    for (double eps : config.eps_grid) {
        for (std::size_t n : config.steps_grid) {
            if (n < 1) {
                throw UsageError("moment_sweep: N must be positive");
            }
            for (std::size_t s = 0; s < config.schemes.size(); ++s) {
                // (sum |q_n|^2, sum |p_n|^2) per grid time, then a failure count.
                cells.push_back({eps, n, s, total});
                total += 2 * (n + 1) + 1;
            }
        }
    }
    std::vector<Stepper> steppers;
    for (const auto& c : cells) {
        steppers.emplace_back(config.schemes[c.scheme], model, c.eps, config.horizon / static_cast<double>(c.steps));
    }

    auto sample = [&](std::vector<double>& acc, std::size_t m, NoisePath& path) {
        for (std::size_t ci = 0; ci < cells.size(); ++ci) {
            const Cell& c = cells[ci];
            const double dt = config.horizon / static_cast<double>(c.steps);
            if (c.scheme == 0 || path.eps != c.eps || path.steps != c.steps || path.stream_id != m) {
                generate_path_into(path, config.seed, m, c.eps, dt, c.steps, model.dimension);
            }
            const Stepper& st = steppers[ci];
            std::vector<double> local(2 * (c.steps + 1), 0.0);
            try {
                st.run(config.initial, path, [&](std::size_t n, const Vector& a, const Vector& b) {
                    const PhaseState s = st.unload(a, b);
                    local[2 * n] = s.q.squaredNorm();
                    local[2 * n + 1] = s.p.squaredNorm();
                });
            } catch (const IntegrationError&) {
                acc[c.offset + 2 * (c.steps + 1)] += 1.0;
                continue;
            }
            for (std::size_t i = 0; i < local.size(); ++i) {
                acc[c.offset + i] += local[i];
            }
        }
    };
    auto body = [&](std::vector<double>& acc, std::size_t begin, std::size_t end) {
        thread_local NoisePath path;
        for (std::size_t m = begin; m < end; ++m) {
            sample(acc, m, path);
        }
    };

    const auto sums = blocked_reduce<std::vector<double>>(
        config.samples, config.threads, [&] { return std::vector<double>(total, 0.0); }, body, add_into);

    std::vector<MomentRow> rows;
    for (const auto& c : cells) {
        MomentRow row;
        row.scheme = std::string(scheme_name(config.schemes[c.scheme]));
        row.eps = c.eps;
        row.dt = config.horizon / static_cast<double>(c.steps);
        row.samples = config.samples;
        row.failed = sums[c.offset + 2 * (c.steps + 1)] > 0.0;
        const double m = static_cast<double>(config.samples);
        row.max_q2 = 0.0;
        row.max_p2 = 0.0;
        for (std::size_t n = 0; n <= c.steps; ++n) {
            row.mean_q2.push_back(sums[c.offset + 2 * n] / m);
            row.mean_p2.push_back(sums[c.offset + 2 * n + 1] / m);
            row.max_q2 = std::max(row.max_q2, row.mean_q2.back());
            row.max_p2 = std::max(row.max_p2, row.mean_p2.back());
        }
        if (row.failed) {
            row.max_q2 = std::numeric_limits<double>::infinity();
            row.max_p2 = std::numeric_limits<double>::infinity();
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<ErrorRecord> moment_records(const std::string& model_name, const std::vector<MomentRow>& rows,
                                        std::uint64_t seed) {
    std::vector<ErrorRecord> out;
    for (const auto& row : rows) {
        for (int which = 0; which < 2; ++which) {
            ErrorRecord r;
            r.model = model_name;
            r.scheme = row.scheme;
            r.estimator = Estimator::Moment;
            r.test_function = which == 0 ? "q-second-moment" : "p-second-moment";
            r.eps = row.eps;
            r.dt = row.dt;
            r.value = which == 0 ? row.max_q2 : row.max_p2;
            r.signed_value = r.value;
            r.samples = row.samples;
            r.seed = seed;
            r.failed = row.failed;
            out.push_back(std::move(r));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

RateFit fit_loglog(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) {
        throw UsageError("fit_rate: x and y lengths differ");
    }
    if (x.size() < 3) {
        throw UsageError("fit_rate: need at least 3 points");
    }
    RateFit fit;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0) || !(y[i] > 0.0) || !std::isfinite(x[i]) || !std::isfinite(y[i])) {
            throw UsageError("fit_rate: all abscissae and values must be positive and finite");
        }
        fit.points.emplace_back(std::log(x[i]), std::log(y[i]));
    }
    const double n = static_cast<double>(fit.points.size());
    double mx = 0.0, my = 0.0;
    for (const auto& [lx, ly] : fit.points) {
        mx += lx;
        my += ly;
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (const auto& [lx, ly] : fit.points) {
        sxx += (lx - mx) * (lx - mx);
        sxy += (lx - mx) * (ly - my);
        syy += (ly - my) * (ly - my);
    }
    if (sxx == 0.0) {
        throw UsageError("fit_rate: abscissae are all equal");
    }
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    fit.r_squared = syy == 0.0 ? 1.0 : std::clamp(sxy * sxy / (sxx * syy), 0.0, 1.0);
    return fit;
}

RateFit fit_rate(const std::vector<ErrorRecord>& records) {
    std::vector<double> x, y;
    for (const auto& r : records) {
        x.push_back(r.estimator == Estimator::SkLimit ? r.eps : r.dt);
        y.push_back(r.value);
    }
    return fit_loglog(x, y);
}

// ---------------------------------------------------------------------------

InequalityReport check_scalar_inequalities() {
    InequalityReport rep{0.0, 0.0, 0.0, 0.0, 0, false};
    constexpr int kPerDecade = 1000;
    constexpr double kLo = -12.0, kHi = 6.0;
    const int count = static_cast<int>((kHi - kLo) * kPerDecade) + 1;
    std::vector<double> taus;
    taus.reserve(count + 1);
    taus.push_back(0.0);
    for (int i = 0; i < count; ++i) {
        taus.push_back(std::pow(10.0, kLo + static_cast<double>(i) / kPerDecade));
    }
    for (double tau : taus) {
        const double ratio = tau == 0.0 ? 0.0 : one_minus_exp_neg(tau) / std::sqrt(tau);
        if (ratio > rep.sup_ratio) {
            rep.sup_ratio = ratio;
            rep.sup_ratio_tau = tau;
        }
        const double log1p_tau = std::log1p(tau);
        for (int n = 0; n <= 200; ++n) {
            const double nn = static_cast<double>(n);
            const double gap = (nn + 1.0) * (std::exp(-nn * log1p_tau) - std::exp(-nn * tau));
            if (gap > rep.sup_weighted_gap) {
                rep.sup_weighted_gap = gap;
                rep.sup_weighted_gap_tau = tau;
                rep.sup_weighted_gap_n = n;
            }
        }
    }
    rep.passed = rep.sup_ratio <= 1.0 + 1e-12 && rep.sup_weighted_gap <= 1.0 + 1e-12;
    return rep;
}

// ---------------------------------------------------------------------------

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

void write_error_csv(std::ostream& out, const std::vector<ErrorRecord>& records) {
    out << "model,scheme,estimator,test_function,eps,dt,value,mc_std_error,samples,seed\n";
    for (const auto& r : records) {
        out << r.model << ',' << r.scheme << ',' << estimator_name(r.estimator) << ',' << r.test_function << ','
            << format_double(r.eps) << ',' << format_double(r.dt) << ',' << format_double(r.value) << ','
            << format_double(r.mc_std_error) << ',' << r.samples << ',' << r.seed << '\n';
    }
}

void write_rate_csv(std::ostream& out, const std::vector<RateSummary>& rows) {
    out << "model,scheme,estimator,test_function,regime,slope,intercept,r_squared,points,window_lo,window_hi,pass\n";
    for (const auto& r : rows) {
        out << r.model << ',' << r.scheme << ',' << r.estimator << ',' << r.test_function << ',' << r.regime << ','
            << format_double(r.fit.slope) << ',' << format_double(r.fit.intercept) << ','
            << format_double(r.fit.r_squared) << ',' << r.fit.points.size() << ',' << format_double(r.window_lo)
            << ',' << format_double(r.window_hi) << ',' << (r.passed ? "true" : "false") << '\n';
    }
}

}  // namespace apsk
