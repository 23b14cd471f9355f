#include "mlmc/estimators.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <limits>
#include <stdexcept>

#include "mlmc/parallel.hpp"

namespace mlmc {

namespace {

constexpr std::int64_t kBatchBlock = 16;

struct LinFit {
    double slope = 0.0;
    double intercept = 0.0;
    double rms_residual = 0.0;
    int points = 0;
};

/// Least squares y = intercept + slope * x.
LinFit fit_line(const std::vector<double>& xs, const std::vector<double>& ys)
{
    LinFit f;
    f.points = static_cast<int>(xs.size());
    if (f.points < 2)
        return f;
    double mx = 0.0, my = 0.0;
    for (int i = 0; i < f.points; ++i) {
        mx += xs[static_cast<std::size_t>(i)];
        my += ys[static_cast<std::size_t>(i)];
    }
    mx /= f.points;
    my /= f.points;
    double sxx = 0.0, sxy = 0.0;
    for (int i = 0; i < f.points; ++i) {
        const double dx = xs[static_cast<std::size_t>(i)] - mx;
        sxx += dx * dx;
        sxy += dx * (ys[static_cast<std::size_t>(i)] - my);
    }
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double ss = 0.0;
    for (int i = 0; i < f.points; ++i) {
        const double r = ys[static_cast<std::size_t>(i)] - f.intercept -
                         f.slope * xs[static_cast<std::size_t>(i)];
        ss += r * r;
    }
    f.rms_residual = std::sqrt(ss / f.points);
    return f;
}

} // namespace

std::string to_string(Coupling c) { return c == Coupling::Standard ? "standard" : "cgv"; }

YSample sample_Q(const Problem& problem, int level, RngStream& rng)
{
    const auto t0 = std::chrono::steady_clock::now();
    const Grid& grid = problem.hierarchy.grid(level);
    PermeabilitySample s = problem.model->sample(grid, rng);
    s.level = level;
    const Evaluation ev = evaluate_sample(problem, s);
    YSample ys;
    ys.y = ev.q;
    ys.q_fine = ev.q;
    ys.work = problem.model->sample_work(grid) + ev.solve_work;
    ys.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return ys;
}

YSample sample_Y(const Problem& problem, int level, Coupling coupling, RngStream& rng)
{
    if (level == 0)
        return sample_Q(problem, 0, rng); // Q_{-1} = 0

    const auto t0 = std::chrono::steady_clock::now();
    const Grid& fine = problem.hierarchy.grid(level);
    const Grid& coarse = problem.hierarchy.grid(level - 1);

    YSample ys;
    if (coupling == Coupling::Standard) {
        CoupledSample cs = problem.model->sample_coupled(fine, coarse, rng);
        cs.fine.level = level;
        cs.coarse.level = level - 1;
        const Evaluation ef = evaluate_sample(problem, cs.fine);
        const Evaluation ec = evaluate_sample(problem, cs.coarse);
        ys.y = ef.q - ec.q;
        ys.q_fine = ef.q;
        ys.work = problem.model->coupled_sample_work(fine, coarse) + ef.solve_work + ec.solve_work;
    } else {
        if (!problem.model->stationary())
            throw std::invalid_argument("CGV requires stationary permeability");
        if (problem.hierarchy.refinement != 2)
            throw std::invalid_argument("CGV requires refinement factor 2");
        PermeabilitySample fs = problem.model->sample(fine, rng);
        fs.level = level;
        const Evaluation ef = evaluate_sample(problem, fs);
        ys.q_fine = ef.q;
        ys.work = problem.model->sample_work(fine) + ef.solve_work;
        double coarse_sum = 0.0;
        const auto offsets = parity_offsets(fine.dim);
        for (const auto& off : offsets) {
            PermeabilitySample sub = extract_coarse_subsample(fs, off);
            const Evaluation es = evaluate_sample(problem, sub);
            coarse_sum += es.q;
            ys.work += static_cast<double>(coarse.cells()) + es.solve_work;
        }
        ys.y = ef.q - coarse_sum / static_cast<double>(offsets.size());
    }
    ys.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return ys;
}

std::vector<std::int64_t> optimal_allocation(std::span<const double> variances,
                                             std::span<const double> costs, double eps)
{
    if (variances.size() != costs.size())
        throw std::invalid_argument("optimal_allocation: size mismatch");
    if (!(eps > 0.0))
        throw std::invalid_argument("optimal_allocation: eps must be positive");
    double total = 0.0;
    for (std::size_t l = 0; l < variances.size(); ++l)
        total += std::sqrt(variances[l] * costs[l]);
    std::vector<std::int64_t> n(variances.size());
    for (std::size_t l = 0; l < variances.size(); ++l) {
        const double nl = 2.0 / (eps * eps) * std::sqrt(variances[l] / costs[l]) * total;
        n[l] = static_cast<std::int64_t>(std::ceil(nl));
        if (n[l] < 1)
            n[l] = 1;
    }
    return n;
}

PowerFit fit_power_law(int refinement, double h0, int first_level, std::span<const double> values)
{
    const double logs = std::log(static_cast<double>(refinement));
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (values[i] > 0.0 && std::isfinite(values[i])) {
            xs.push_back(static_cast<double>(first_level) + static_cast<double>(i));
            ys.push_back(std::log(values[i]) / logs);
        } else {
            std::cerr << "[mlmc] warning: excluding level " << first_level + static_cast<int>(i)
                      << " from rate fit (zero or invalid value)\n";
        }
    }
    const LinFit f = fit_line(xs, ys);
    PowerFit p;
    p.points = f.points;
    if (f.points < 2) {
        p.rate = std::numeric_limits<double>::quiet_NaN();
        p.constant = std::numeric_limits<double>::quiet_NaN();
        return p;
    }
    // values ~ C h_l^rate with h_l = h0 s^-l: slope over l is -rate
    const double log_h0 = std::log(h0) / logs;
    p.rate = -f.slope;
    p.constant = std::pow(static_cast<double>(refinement), f.intercept - p.rate * log_h0);
    p.rms_residual = f.rms_residual;
    return p;
}

RateEstimate estimate_rates(int refinement, double h0, int first_level,
                            std::span<const double> abs_means, std::span<const double> variances,
                            std::span<const double> costs)
{
    if (abs_means.size() < 3 || variances.size() != abs_means.size() ||
        costs.size() != abs_means.size())
        throw std::invalid_argument("estimate_rates: need statistics for at least 3 levels");

    RateEstimate r;
    r.levels_used = static_cast<int>(abs_means.size());

    const PowerFit fa = fit_power_law(refinement, h0, first_level, abs_means);
    r.alpha = fa.rate;
    r.c_alpha = fa.constant;
    r.alpha_residual = fa.rms_residual;

    const PowerFit fb = fit_power_law(refinement, h0, first_level, variances);
    r.beta = fb.rate;
    r.c_beta = fb.constant;
    r.beta_residual = fb.rms_residual;

    const PowerFit fc = fit_power_law(refinement, h0, first_level, costs);
    r.gamma = std::isfinite(fc.rate) ? -fc.rate : fc.rate; // costs grow: C_l ~ C h^-gamma
    r.c_gamma = fc.constant;
    r.gamma_residual = fc.rms_residual;
    return r;
}

LevelAccumulator run_level_batch(const Problem& problem, int level, Coupling coupling,
                                 std::uint64_t seed, StreamPurpose purpose, std::int64_t i0,
                                 std::int64_t i1, int threads)
{
    LevelAccumulator total;
    total.level = level;
    if (i1 <= i0)
        return total;

    const std::int64_t nblocks = (i1 - i0 + kBatchBlock - 1) / kBatchBlock;
    std::vector<LevelAccumulator> partials(static_cast<std::size_t>(nblocks));
    parallel_for_blocks(i0, i1, threads, kBatchBlock,
                        [&](std::int64_t block, std::int64_t b0, std::int64_t b1) {
                            LevelAccumulator acc;
                            acc.level = level;
                            for (std::int64_t i = b0; i < b1; ++i) {
                                RngStream rng = sample_stream(seed, purpose, level, i);
                                const YSample ys = sample_Y(problem, level, coupling, rng);
                                acc.add(ys.y, ys.work, ys.seconds);
                            }
                            partials[static_cast<std::size_t>(block)] = acc;
                        });
    for (const auto& p : partials)
        total.merge(p);
    return total;
}

MLMCResult mlmc_run(const Problem& problem, double eps, Coupling coupling,
                    const MlmcOptions& options, std::uint64_t seed)
{
    if (!(eps > 0.0))
        throw std::invalid_argument("mlmc_run: eps must be positive");
    if (coupling == Coupling::Cgv) {
        if (!problem.model->stationary())
            throw std::invalid_argument("CGV requires stationary permeability");
        if (problem.hierarchy.refinement != 2)
            throw std::invalid_argument("CGV requires refinement factor 2");
    }

    const int l_max = problem.hierarchy.finest_level();
    const int s = problem.hierarchy.refinement;
    const double h0 = problem.hierarchy.grid(0).h;

    int active = std::min(options.initial_levels - 1, l_max);
    if (active < 0)
        active = 0;

    std::vector<LevelAccumulator> acc(static_cast<std::size_t>(active) + 1);
    for (int l = 0; l <= active; ++l)
        acc[static_cast<std::size_t>(l)].level = l;
    std::vector<std::int64_t> target(static_cast<std::size_t>(active) + 1, options.n_warmup);

    MLMCResult res;
    res.eps = eps;
    res.coupling = coupling;

    double alpha_used = options.alpha_fallback;
    double bias = 0.0;
    int rounds = 0;

    while (true) {
        if (++rounds > options.max_rounds) {
            res.level_budget_exhausted = true;
            break;
        }

        // take any missing samples
        for (int l = 0; l <= active; ++l) {
            auto& a = acc[static_cast<std::size_t>(l)];
            const std::int64_t want = std::max<std::int64_t>(target[static_cast<std::size_t>(l)],
                                                             options.n_warmup);
            if (a.n < want)
                a.merge(run_level_batch(problem, l, coupling, seed, StreamPurpose::EstimatorSample,
                                        a.n, want, options.threads));
        }

        std::vector<double> variances, costs;
        for (int l = 0; l <= active; ++l) {
            variances.push_back(std::max(acc[static_cast<std::size_t>(l)].variance(),
                                         options.variance_floor));
            costs.push_back(std::max(acc[static_cast<std::size_t>(l)].mean_work(), 1.0));
        }
        const auto n_opt = optimal_allocation(variances, costs, eps);
        bool need_more = false;
        for (int l = 0; l <= active; ++l) {
            target[static_cast<std::size_t>(l)] = n_opt[static_cast<std::size_t>(l)];
            if (acc[static_cast<std::size_t>(l)].n < n_opt[static_cast<std::size_t>(l)])
                need_more = true;
        }
        if (need_more)
            continue;

        // bias from Richardson-style extrapolation of the last level mean
        alpha_used = options.alpha_fallback;
        if (active >= 2) {
            std::vector<double> means;
            std::vector<double> vars, cost1;
            for (int l = 1; l <= active; ++l) {
                means.push_back(std::abs(acc[static_cast<std::size_t>(l)].mean()));
                vars.push_back(acc[static_cast<std::size_t>(l)].variance());
                cost1.push_back(acc[static_cast<std::size_t>(l)].mean_work());
            }
            if (means.size() >= 3) {
                try {
                    const RateEstimate rr = estimate_rates(s, h0, 1, means, vars, cost1);
                    if (std::isfinite(rr.alpha))
                        alpha_used = std::max(0.5, rr.alpha);
                } catch (const std::exception&) {
                }
            }
        }
        const double denom = std::pow(static_cast<double>(s), alpha_used) - 1.0;
        bias = (active >= 1) ? std::abs(acc[static_cast<std::size_t>(active)].mean()) / denom : 0.0;

        if (active >= 1 && bias * bias > 0.5 * eps * eps) {
            if (active == l_max) {
                res.level_budget_exhausted = true;
                break;
            }
            ++active;
            acc.emplace_back();
            acc.back().level = active;
            target.push_back(options.n_warmup);
            continue;
        }
        break;
    }

    res.alpha_used = alpha_used;
    res.bias = bias;
    double estimate = 0.0, sampling = 0.0, work = 0.0, secs = 0.0;
    for (int l = 0; l <= active; ++l) {
        const auto& a = acc[static_cast<std::size_t>(l)];
        estimate += a.mean();
        sampling += a.variance() / static_cast<double>(a.n);
        work += a.sum_work;
        secs += a.sum_seconds;
        LevelStats st;
        st.level = l;
        st.m = problem.hierarchy.grid(l).m;
        st.h = problem.hierarchy.grid(l).h;
        st.n = a.n;
        st.mean_y = a.mean();
        st.var_y = a.variance();
        st.mean_work = a.mean_work();
        st.mean_seconds = a.mean_seconds();
        res.levels.push_back(st);
    }
    res.estimate = estimate;
    res.sampling_error = sampling;
    res.mse_bound = sampling + bias * bias;
    res.total_work = work;
    res.total_seconds = secs;

    if (active >= 3) {
        std::vector<double> means, vars, cost1;
        for (int l = 1; l <= active; ++l) {
            means.push_back(std::abs(acc[static_cast<std::size_t>(l)].mean()));
            vars.push_back(acc[static_cast<std::size_t>(l)].variance());
            cost1.push_back(acc[static_cast<std::size_t>(l)].mean_work());
        }
        try {
            res.rates = estimate_rates(s, h0, 1, means, vars, cost1);
            res.rates_valid = true;
        } catch (const std::exception&) {
            res.rates_valid = false;
        }
    }
    return res;
}

MCResult mc_run(const Problem& problem, double eps, int level, const MlmcOptions& options,
                std::uint64_t seed)
{
    if (!(eps > 0.0))
        throw std::invalid_argument("mc_run: eps must be positive");
    if (level < 0 || level > problem.hierarchy.finest_level())
        throw std::invalid_argument("mc_run: level outside hierarchy");

    LevelAccumulator acc;
    acc.level = level;

    auto take = [&](std::int64_t i0, std::int64_t i1) {
        const std::int64_t nblocks = (i1 - i0 + kBatchBlock - 1) / kBatchBlock;
        std::vector<LevelAccumulator> partials(static_cast<std::size_t>(nblocks));
        parallel_for_blocks(i0, i1, options.threads, kBatchBlock,
                            [&](std::int64_t block, std::int64_t b0, std::int64_t b1) {
                                LevelAccumulator a;
                                for (std::int64_t i = b0; i < b1; ++i) {
                                    RngStream rng =
                                        sample_stream(seed, StreamPurpose::McSample, level, i);
                                    const YSample ys = sample_Q(problem, level, rng);
                                    a.add(ys.y, ys.work, ys.seconds);
                                }
                                partials[static_cast<std::size_t>(block)] = a;
                            });
        for (const auto& p : partials)
            acc.merge(p);
    };

    take(0, options.n_warmup);
    const double v = std::max(acc.variance(), options.variance_floor);
    const std::int64_t n_needed =
        std::max<std::int64_t>(options.n_warmup,
                               static_cast<std::int64_t>(std::ceil(2.0 * v / (eps * eps))));
    if (acc.n < n_needed)
        take(acc.n, n_needed);

    MCResult res;
    res.estimate = acc.mean();
    res.eps = eps;
    res.level = level;
    res.n = acc.n;
    res.variance = acc.variance();
    res.total_work = acc.sum_work;
    res.total_seconds = acc.sum_seconds;
    return res;
}

} // namespace mlmc
