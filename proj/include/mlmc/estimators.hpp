#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mlmc/problem.hpp"
#include "mlmc/rng.hpp"

namespace mlmc {

enum class Coupling { Standard, Cgv };

std::string to_string(Coupling c);

/// Running sums for the level difference Y_l = Q_l - Q_{l-1}.
/// Merge-associative so parallel workers can accumulate partial sums.
struct LevelAccumulator {
    int level = 0;
    std::int64_t n = 0;
    double sum_y = 0.0;
    double sum_y2 = 0.0;
    double sum_work = 0.0;
    double sum_seconds = 0.0;

    void add(double y, double work, double seconds)
    {
        ++n;
        sum_y += y;
        sum_y2 += y * y;
        sum_work += work;
        sum_seconds += seconds;
    }

    void merge(const LevelAccumulator& o)
    {
        n += o.n;
        sum_y += o.sum_y;
        sum_y2 += o.sum_y2;
        sum_work += o.sum_work;
        sum_seconds += o.sum_seconds;
    }

    double mean() const { return n > 0 ? sum_y / static_cast<double>(n) : 0.0; }

    /// Unbiased sample variance, clamped at zero against round-off.
    double variance() const
    {
        if (n < 2)
            return 0.0;
        const double nn = static_cast<double>(n);
        const double v = (sum_y2 - sum_y * sum_y / nn) / (nn - 1.0);
        return v > 0.0 ? v : 0.0;
    }

    double mean_work() const { return n > 0 ? sum_work / static_cast<double>(n) : 0.0; }
    double mean_seconds() const { return n > 0 ? sum_seconds / static_cast<double>(n) : 0.0; }
};

/// One coupled sample of Y_l. At level 0, Y = Q_0 (no coarse solve).
/// Standard coupling: Y = Q(k_l) - Q(coarse k from the same random sample).
/// CGV coupling: Y = Q(k_l) - 2^-d sum_j Q(k_l^(j)) over all parity
/// subsamples; requires a stationary model and refinement factor 2.
struct YSample {
    double y = 0.0;
    double q_fine = 0.0;
    double work = 0.0;
    double seconds = 0.0;
};

YSample sample_Y(const Problem& problem, int level, Coupling coupling, RngStream& rng);

/// A single-level sample of Q at the given level (plain Monte Carlo).
YSample sample_Q(const Problem& problem, int level, RngStream& rng);

/// N_l = ceil(2 eps^-2 sqrt(V_l/C_l) sum_k sqrt(V_k C_k)): the minimiser of
/// total cost subject to a sampling error of eps^2/2.
std::vector<std::int64_t> optimal_allocation(std::span<const double> variances,
                                             std::span<const double> costs, double eps);

/// Least-squares fit of values ~ constant * h_l^rate over a level range
/// (positive rate for values that decay under refinement). Non-positive or
/// non-finite entries are excluded with a warning.
struct PowerFit {
    double rate = 0.0;
    double constant = 0.0;
    double rms_residual = 0.0; // in log_s units
    int points = 0;
};

PowerFit fit_power_law(int refinement, double h0, int first_level, std::span<const double> values);

/// Least-squares fits of the decay/growth exponents in
/// |E Y_l| ~ C_alpha h_l^alpha, V[Y_l] ~ C_beta h_l^beta, C_l ~ C_gamma h_l^-gamma.
struct RateEstimate {
    double alpha = 0.0, beta = 0.0, gamma = 0.0;
    double c_alpha = 0.0, c_beta = 0.0, c_gamma = 0.0;
    double alpha_residual = 0.0, beta_residual = 0.0, gamma_residual = 0.0; // rms in log_s
    int levels_used = 0;
};

/// Fit over levels first_level, first_level+1, ... (values aligned with the
/// spans); h0 is the level-0 mesh width and s the refinement factor.
/// Requires >= 3 levels of statistics; zero/invalid entries are excluded from
/// the corresponding fit with a warning.
RateEstimate estimate_rates(int refinement, double h0, int first_level,
                            std::span<const double> abs_means, std::span<const double> variances,
                            std::span<const double> costs);

struct LevelStats {
    int level = 0;
    std::int64_t m = 0;
    double h = 0.0;
    std::int64_t n = 0;
    double mean_y = 0.0;
    double var_y = 0.0;
    double mean_work = 0.0;
    double mean_seconds = 0.0;
};

struct MLMCResult {
    double estimate = 0.0;
    double eps = 0.0;
    Coupling coupling = Coupling::Standard;
    double sampling_error = 0.0; // sum_l V_l / N_l
    double bias = 0.0;           // |E[Q_L - Q]| estimate
    double mse_bound = 0.0;      // sampling_error + bias^2
    double alpha_used = 0.0;
    std::vector<LevelStats> levels;
    RateEstimate rates;
    bool rates_valid = false;
    double total_work = 0.0;
    double total_seconds = 0.0;
    bool level_budget_exhausted = false;
};

struct MlmcOptions {
    int n_warmup = 100;
    int initial_levels = 3;
    int threads = 1;
    double alpha_fallback = 1.0;
    double variance_floor = 1e-30;
    int max_rounds = 100;
};

/// Adaptive MLMC: warm-up samples per level, optimal reallocation, bias
/// estimate |mean Y_L| / (s^alpha - 1), appending levels while the bias
/// square exceeds eps^2/2. Sets level_budget_exhausted instead of exceeding
/// the hierarchy's finest level.
MLMCResult mlmc_run(const Problem& problem, double eps, Coupling coupling,
                    const MlmcOptions& options, std::uint64_t seed);

struct MCResult {
    double estimate = 0.0;
    double eps = 0.0;
    int level = 0;
    std::int64_t n = 0;
    double variance = 0.0;
    double total_work = 0.0;
    double total_seconds = 0.0;
};

/// Single-level Monte Carlo at a fixed level with N = ceil(2 V_L / eps^2),
/// the variance estimated from n_warmup pilot samples.
MCResult mc_run(const Problem& problem, double eps, int level, const MlmcOptions& options,
                std::uint64_t seed);

/// Sample Y_l for indices [i0, i1) with per-sample derived streams,
/// accumulated in deterministic block order. Exposed for studies and tests.
LevelAccumulator run_level_batch(const Problem& problem, int level, Coupling coupling,
                                 std::uint64_t seed, StreamPurpose purpose, std::int64_t i0,
                                 std::int64_t i1, int threads);

} // namespace mlmc
