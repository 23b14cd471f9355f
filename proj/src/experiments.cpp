#include "mlmc/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "mlmc/parallel.hpp"

namespace mlmc {

namespace {

constexpr std::int64_t kBlock = 16;

[[noreturn]] void config_error(const std::string& path, const std::string& msg)
{
    throw std::invalid_argument("config error at " + path + ": " + msg);
}

template <typename T>
T get_field(const json& j, const std::string& path, const std::string& key, T def)
{
    if (!j.contains(key))
        return def;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        config_error(path + key, e.what());
    }
}

/// Running raw moments up to order 4; merge-associative.
struct Moments {
    std::int64_t n = 0;
    double s1 = 0.0, s2 = 0.0, s3 = 0.0, s4 = 0.0;

    void add(double x)
    {
        ++n;
        const double x2 = x * x;
        s1 += x;
        s2 += x2;
        s3 += x2 * x;
        s4 += x2 * x2;
    }

    void merge(const Moments& o)
    {
        n += o.n;
        s1 += o.s1;
        s2 += o.s2;
        s3 += o.s3;
        s4 += o.s4;
    }

    double mean() const { return n > 0 ? s1 / static_cast<double>(n) : 0.0; }

    double variance() const
    {
        if (n < 2)
            return 0.0;
        const double nn = static_cast<double>(n);
        const double v = (s2 - s1 * s1 / nn) / (nn - 1.0);
        return v > 0.0 ? v : 0.0;
    }

    double mean_se() const
    {
        return n > 1 ? std::sqrt(variance() / static_cast<double>(n)) : 0.0;
    }

    /// Large-sample standard error of the sample variance.
    double variance_se() const
    {
        if (n < 4)
            return 0.0;
        const double nn = static_cast<double>(n);
        const double m = mean();
        const double m2 = std::max(0.0, s2 / nn - m * m);
        const double m4 =
            (s4 - 4.0 * m * s3 + 6.0 * m * m * s2 - 4.0 * m * m * m * s1) / nn + m * m * m * m;
        return std::sqrt(std::max(0.0, m4 - m2 * m2) / nn);
    }
};

std::string fmt(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string hash_hex(std::uint64_t h)
{
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

json envelope(const ExperimentConfig& c)
{
    json j;
    j["experiment"] = c.experiment;
    const json echo = config_to_json(c);
    j["config"] = echo;
    j["config_hash"] = hash_hex(config_hash(echo));
    j["seed"] = c.seed;
    j["threads"] = c.threads;
    return j;
}

json nan_to_null(double v)
{
    if (std::isfinite(v))
        return v;
    return nullptr;
}

} // namespace

// ---------------------------------------------------------------------------
// Config

ExperimentConfig config_from_json(const json& j)
{
    ExperimentConfig c;
    c.experiment = get_field<std::string>(j, "", "experiment", c.experiment);
    if (c.experiment != "mlmc" && c.experiment != "convergence" && c.experiment != "cgv-compare" &&
        c.experiment != "solver-bench")
        config_error("experiment", "must be mlmc, convergence, cgv-compare or solver-bench");

    c.problem = get_field<std::string>(j, "", "problem", c.problem);
    if (c.problem != "model_problem_1" && c.problem != "model_problem_2")
        config_error("problem", "must be model_problem_1 or model_problem_2");

    c.dimension = get_field<int>(j, "", "dimension", c.dimension);
    if (c.dimension < 1 || c.dimension > 3)
        config_error("dimension", "must be 1, 2 or 3");

    if (j.contains("grid")) {
        const json& g = j.at("grid");
        c.m0 = get_field<std::int64_t>(g, "grid.", "m0", c.m0);
        c.refinement = get_field<int>(g, "grid.", "refinement", c.refinement);
        c.levels = get_field<int>(g, "grid.", "levels", c.levels);
        c.reference_level = get_field<int>(g, "grid.", "reference_level", c.reference_level);
    }
    if (c.m0 < 2)
        config_error("grid.m0", "must be >= 2");
    if (c.refinement < 2)
        config_error("grid.refinement", "must be >= 2");
    if (c.levels < 0)
        config_error("grid.levels", "must be >= 0");

    if (j.contains("permeability")) {
        const json& p = j.at("permeability");
        c.model = get_field<std::string>(p, "permeability.", "model", c.model);
        if (c.model == "lognormal") {
            c.field.mu = get_field<double>(p, "permeability.", "mu", c.field.mu);
            c.field.sigma2 = get_field<double>(p, "permeability.", "sigma2", c.field.sigma2);
            c.field.lambda = get_field<double>(p, "permeability.", "lambda", c.field.lambda);
            c.field.norm_r = get_field<int>(p, "permeability.", "norm", c.field.norm_r);
            try {
                c.field.validate();
            } catch (const std::exception& e) {
                config_error("permeability", e.what());
            }
        } else if (c.model == "piecewise_constant") {
            if (p.contains("layers")) {
                const json& layers = p.at("layers");
                if (!layers.is_array() || layers.size() != 3)
                    config_error("permeability.layers", "need exactly 3 layer entries");
                for (int i = 0; i < 3; ++i) {
                    const std::string path = "permeability.layers[" + std::to_string(i) + "].";
                    auto& s = c.const_layers[static_cast<std::size_t>(i)];
                    s.mu = get_field<double>(layers.at(i), path, "mu", 0.0);
                    s.sigma2 = get_field<double>(layers.at(i), path, "sigma2", 1.0);
                    if (s.sigma2 < 0.0)
                        config_error(path + "sigma2", "must be >= 0");
                }
            } else {
                for (auto& s : c.const_layers)
                    s = NormalSpec{0.0, 1.0};
            }
        } else if (c.model == "piecewise_correlated") {
            // defaults: outer layers mu=0, lambda=0.3; middle mu=4, lambda=0.1
            c.corr_layers[0] = {0.0, 1.0, 0.3, 2};
            c.corr_layers[1] = {4.0, 1.0, 0.1, 2};
            c.corr_layers[2] = {0.0, 1.0, 0.3, 2};
            if (p.contains("layers")) {
                const json& layers = p.at("layers");
                if (!layers.is_array() || layers.size() != 3)
                    config_error("permeability.layers", "need exactly 3 layer entries");
                for (int i = 0; i < 3; ++i) {
                    const std::string path = "permeability.layers[" + std::to_string(i) + "].";
                    auto& s = c.corr_layers[static_cast<std::size_t>(i)];
                    s.mu = get_field<double>(layers.at(i), path, "mu", s.mu);
                    s.sigma2 = get_field<double>(layers.at(i), path, "sigma2", s.sigma2);
                    s.lambda = get_field<double>(layers.at(i), path, "lambda", s.lambda);
                    s.norm_r = get_field<int>(layers.at(i), path, "norm", s.norm_r);
                    try {
                        s.validate();
                    } catch (const std::exception& e) {
                        config_error(path.substr(0, path.size() - 1), e.what());
                    }
                }
            }
        } else {
            config_error("permeability.model",
                         "must be lognormal, piecewise_constant or piecewise_correlated");
        }
    }

    if (j.contains("qoi")) {
        const json& q = j.at("qoi");
        c.qoi_override = true;
        const std::string kind = get_field<std::string>(q, "qoi.", "kind", "local_average");
        if (kind == "local_average") {
            c.qoi.kind = QoISpec::Kind::LocalAverage;
            if (q.contains("centre")) {
                const auto centre = q.at("centre").get<std::vector<double>>();
                if (centre.size() != static_cast<std::size_t>(c.dimension))
                    config_error("qoi.centre", "needs one entry per dimension");
                for (std::size_t a = 0; a < centre.size(); ++a)
                    c.qoi.centre[a] = centre[a];
            }
            c.qoi.side = get_field<double>(q, "qoi.", "side", c.qoi.side);
        } else if (kind == "outflow") {
            c.qoi.kind = QoISpec::Kind::Outflow;
            c.qoi.outflow_axis = get_field<int>(q, "qoi.", "axis", 0);
            c.qoi.outflow_upper = get_field<bool>(q, "qoi.", "upper", true);
        } else {
            config_error("qoi.kind", "must be local_average or outflow");
        }
    }

    if (j.contains("solver")) {
        const json& s = j.at("solver");
        c.solver.tol = get_field<double>(s, "solver.", "tol", c.solver.tol);
        c.solver.max_iter = get_field<int>(s, "solver.", "max_iter", c.solver.max_iter);
        c.solver.smoother_sweeps =
            get_field<int>(s, "solver.", "smoother_sweeps", c.solver.smoother_sweeps);
        if (!(c.solver.tol > 0.0))
            config_error("solver.tol", "must be > 0");
    }

    c.samples = get_field<std::int64_t>(j, "", "samples", c.samples);
    if (c.samples < 2)
        config_error("samples", "must be >= 2");
    c.epsilon = get_field<double>(j, "", "epsilon", c.epsilon);
    if (!(c.epsilon > 0.0))
        config_error("epsilon", "must be > 0");
    c.coupling = get_field<std::string>(j, "", "coupling", c.coupling);
    if (c.coupling != "standard" && c.coupling != "cgv")
        config_error("coupling", "must be standard or cgv");
    c.n_warmup = get_field<int>(j, "", "n_warmup", c.n_warmup);
    if (c.n_warmup < 2)
        config_error("n_warmup", "must be >= 2");
    c.compare_mc = get_field<bool>(j, "", "compare_mc", c.compare_mc);
    c.seed = get_field<std::uint64_t>(j, "", "seed", c.seed);
    c.threads = get_field<int>(j, "", "threads", c.threads);
    if (c.threads < 1)
        config_error("threads", "must be >= 1");
    c.output_dir = get_field<std::string>(j, "", "output_dir", c.output_dir);
    c.dump_field = get_field<bool>(j, "", "dump_field", c.dump_field);
    c.dump_residuals = get_field<bool>(j, "", "dump_residuals", c.dump_residuals);

    if (c.experiment == "convergence") {
        if (c.reference_level < 0)
            c.reference_level = c.levels + 1;
        if (c.reference_level <= c.levels)
            config_error("grid.reference_level", "must be strictly finer than the study levels");
    }
    if (c.experiment == "cgv-compare" || c.coupling == "cgv") {
        if (c.model != "lognormal")
            config_error("permeability.model",
                         "CGV requires the stationary lognormal model");
        if (c.refinement != 2)
            config_error("grid.refinement", "CGV requires refinement factor 2");
    }
    return c;
}

ExperimentConfig load_config_file(const std::string& path)
{
    std::ifstream is(path);
    if (!is)
        throw std::invalid_argument("cannot open config file: " + path);
    json j;
    try {
        j = json::parse(is);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument("config parse error in " + path + ": " + e.what());
    }
    return config_from_json(j);
}

json config_to_json(const ExperimentConfig& c)
{
    json j;
    j["experiment"] = c.experiment;
    j["problem"] = c.problem;
    j["dimension"] = c.dimension;
    j["grid"] = {{"m0", c.m0},
                 {"refinement", c.refinement},
                 {"levels", c.levels},
                 {"reference_level", c.reference_level}};
    json p;
    p["model"] = c.model;
    if (c.model == "lognormal") {
        p["mu"] = c.field.mu;
        p["sigma2"] = c.field.sigma2;
        p["lambda"] = c.field.lambda;
        p["norm"] = c.field.norm_r;
    } else if (c.model == "piecewise_constant") {
        json layers = json::array();
        for (const auto& s : c.const_layers)
            layers.push_back({{"mu", s.mu}, {"sigma2", s.sigma2}});
        p["layers"] = layers;
    } else {
        json layers = json::array();
        for (const auto& s : c.corr_layers)
            layers.push_back(
                {{"mu", s.mu}, {"sigma2", s.sigma2}, {"lambda", s.lambda}, {"norm", s.norm_r}});
        p["layers"] = layers;
    }
    j["permeability"] = p;
    if (c.qoi_override) {
        json q;
        if (c.qoi.kind == QoISpec::Kind::LocalAverage) {
            q["kind"] = "local_average";
            std::vector<double> centre;
            for (int a = 0; a < c.dimension; ++a)
                centre.push_back(c.qoi.centre[static_cast<std::size_t>(a)]);
            q["centre"] = centre;
            q["side"] = c.qoi.side;
        } else {
            q["kind"] = "outflow";
            q["axis"] = c.qoi.outflow_axis;
            q["upper"] = c.qoi.outflow_upper;
        }
        j["qoi"] = q;
    }
    j["solver"] = {{"tol", c.solver.tol},
                   {"max_iter", c.solver.max_iter},
                   {"smoother_sweeps", c.solver.smoother_sweeps}};
    j["samples"] = c.samples;
    j["epsilon"] = c.epsilon;
    j["coupling"] = c.coupling;
    j["n_warmup"] = c.n_warmup;
    j["compare_mc"] = c.compare_mc;
    j["seed"] = c.seed;
    j["threads"] = c.threads;
    j["output_dir"] = c.output_dir;
    j["dump_field"] = c.dump_field;
    j["dump_residuals"] = c.dump_residuals;
    return j;
}

std::uint64_t config_hash(const json& canonical)
{
    const std::string s = canonical.dump();
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::shared_ptr<const PermeabilityModel> make_model(const ExperimentConfig& c)
{
    if (c.model == "lognormal")
        return std::make_shared<LognormalFieldModel>(c.field);
    if (c.model == "piecewise_constant")
        return std::make_shared<PiecewiseConstantModel>(c.const_layers);
    return std::make_shared<PiecewiseCorrelatedModel>(c.corr_layers);
}

Problem make_problem(const ExperimentConfig& c, int finest_level)
{
    Problem p;
    p.hierarchy = build_hierarchy(c.dimension, c.m0, c.refinement,
                                  finest_level < 0 ? c.levels : finest_level);
    p.model = make_model(c);
    p.mp = make_model_problem(c.problem, c.dimension);
    p.qoi = c.qoi_override ? c.qoi : p.mp.default_qoi;
    p.averaging = EdgeAverage::Harmonic;
    p.solver = c.solver;
    return p;
}

// ---------------------------------------------------------------------------
// Convergence study

ConvergenceResult run_convergence_study(const ExperimentConfig& c)
{
    const int ref = c.reference_level < 0 ? c.levels + 1 : c.reference_level;
    if (ref <= c.levels)
        throw std::invalid_argument(
            "config error at grid.reference_level: must be strictly finer than the study levels");

    Problem p = make_problem(c, ref);
    std::vector<Grid> desc; // reference grid first, then down to level 0
    for (int l = ref; l >= 0; --l)
        desc.push_back(p.hierarchy.grid(l));
    p.model->prepare(desc);

    const int L = c.levels;
    struct Block {
        std::vector<Moments> err;  // Q_ref - Q_l, levels 0..L
        std::vector<Moments> pair; // Q_l - Q_{l-1}, levels 1..L
        std::vector<Moments> q;    // Q_l
    };
    const std::int64_t nblocks = (c.samples + kBlock - 1) / kBlock;
    std::vector<Block> partials(static_cast<std::size_t>(nblocks));

    parallel_for_blocks(0, c.samples, c.threads, kBlock,
                        [&](std::int64_t block, std::int64_t b0, std::int64_t b1) {
                            Block bs;
                            bs.err.resize(static_cast<std::size_t>(L) + 1);
                            bs.pair.resize(static_cast<std::size_t>(L) + 1);
                            bs.q.resize(static_cast<std::size_t>(L) + 1);
                            for (std::int64_t i = b0; i < b1; ++i) {
                                RngStream rng = sample_stream(c.seed,
                                                              StreamPurpose::ConvergenceSample, 0, i);
                                const auto chain = p.model->sample_chain(desc, rng);
                                std::vector<double> qv(desc.size(),
                                                       std::numeric_limits<double>::quiet_NaN());
                                for (std::size_t jx = 0; jx < desc.size(); ++jx) {
                                    const int level = ref - static_cast<int>(jx);
                                    if (jx == 0 || level <= L)
                                        qv[jx] = evaluate_sample(p, chain[jx]).q;
                                }
                                for (int l = 0; l <= L; ++l) {
                                    const std::size_t jx = static_cast<std::size_t>(ref - l);
                                    bs.err[static_cast<std::size_t>(l)].add(qv[0] - qv[jx]);
                                    bs.q[static_cast<std::size_t>(l)].add(qv[jx]);
                                    if (l >= 1)
                                        bs.pair[static_cast<std::size_t>(l)].add(qv[jx] -
                                                                                 qv[jx + 1]);
                                }
                            }
                            partials[static_cast<std::size_t>(block)] = std::move(bs);
                        });

    std::vector<Moments> err(static_cast<std::size_t>(L) + 1), pair(err.size()), q(err.size());
    for (const auto& bs : partials) {
        if (bs.err.empty())
            continue;
        for (std::size_t l = 0; l < err.size(); ++l) {
            err[l].merge(bs.err[l]);
            pair[l].merge(bs.pair[l]);
            q[l].merge(bs.q[l]);
        }
    }

    ConvergenceResult res;
    res.reference_level = ref;
    res.reference_m = p.hierarchy.grid(ref).m;
    res.samples = c.samples;
    std::vector<double> errs, vars;
    for (int l = 0; l <= L; ++l) {
        ConvergenceRow row;
        row.level = l;
        row.m = p.hierarchy.grid(l).m;
        row.h = p.hierarchy.grid(l).h;
        row.abs_err = std::abs(err[static_cast<std::size_t>(l)].mean());
        row.err_se = err[static_cast<std::size_t>(l)].mean_se();
        row.var_diff = l >= 1 ? pair[static_cast<std::size_t>(l)].variance() : 0.0;
        row.var_diff_se = l >= 1 ? pair[static_cast<std::size_t>(l)].variance_se() : 0.0;
        row.mean_q = q[static_cast<std::size_t>(l)].mean();
        res.rows.push_back(row);
        errs.push_back(row.abs_err);
        if (l >= 1)
            vars.push_back(row.var_diff);
    }
    const double h0 = p.hierarchy.grid(0).h;
    res.alpha_fit = fit_power_law(c.refinement, h0, 0, errs);
    res.beta_fit = fit_power_law(c.refinement, h0, 1, vars);
    return res;
}

// ---------------------------------------------------------------------------
// CGV comparison

CgvCompareResult run_cgv_comparison(const ExperimentConfig& c)
{
    if (c.model != "lognormal")
        throw std::invalid_argument("cgv-compare requires the stationary lognormal model");
    if (c.refinement != 2)
        throw std::invalid_argument("cgv-compare requires refinement factor 2");

    Problem p = make_problem(c);
    std::vector<Grid> grids;
    for (int l = 0; l <= c.levels; ++l)
        grids.push_back(p.hierarchy.grid(l));
    p.model->prepare(grids);

    CgvCompareResult res;
    res.samples = c.samples;
    const auto offsets = parity_offsets(c.dimension);

    for (int l = 1; l <= c.levels; ++l) {
        const Grid& fine = p.hierarchy.grid(l);
        const Grid& coarse = p.hierarchy.grid(l - 1);

        struct Block {
            Moments y_std, y_cgv;
            double work_std = 0.0, work_cgv = 0.0;
        };
        const std::int64_t nblocks = (c.samples + kBlock - 1) / kBlock;
        std::vector<Block> partials(static_cast<std::size_t>(nblocks));

        parallel_for_blocks(
            0, c.samples, c.threads, kBlock,
            [&](std::int64_t block, std::int64_t b0, std::int64_t b1) {
                Block bs;
                for (std::int64_t i = b0; i < b1; ++i) {
                    RngStream rng = sample_stream(c.seed, StreamPurpose::CgvCompareSample, l, i);
                    // the coupled pair gives the standard-MLMC coarse sample;
                    // the cgv subsamples are extracted from the same fine field
                    CoupledSample cs = p.model->sample_coupled(fine, coarse, rng);
                    cs.fine.level = l;
                    const Evaluation ef = evaluate_sample(p, cs.fine);
                    const Evaluation ec = evaluate_sample(p, cs.coarse);

                    double q_sum = 0.0, w_sum = 0.0;
                    for (const auto& off : offsets) {
                        const PermeabilitySample sub = extract_coarse_subsample(cs.fine, off);
                        const Evaluation es = evaluate_sample(p, sub);
                        q_sum += es.q;
                        w_sum += es.solve_work;
                    }
                    bs.y_std.add(ef.q - ec.q);
                    bs.y_cgv.add(ef.q - q_sum / static_cast<double>(offsets.size()));
                    const double coarse_cells = static_cast<double>(coarse.cells());
                    bs.work_std +=
                        p.model->coupled_sample_work(fine, coarse) + ef.solve_work + ec.solve_work;
                    bs.work_cgv += p.model->sample_work(fine) +
                                   static_cast<double>(offsets.size()) * coarse_cells +
                                   ef.solve_work + w_sum;
                }
                partials[static_cast<std::size_t>(block)] = bs;
            });

        Moments y_std, y_cgv;
        double work_std = 0.0, work_cgv = 0.0;
        for (const auto& bs : partials) {
            y_std.merge(bs.y_std);
            y_cgv.merge(bs.y_cgv);
            work_std += bs.work_std;
            work_cgv += bs.work_cgv;
        }

        CgvCompareRow row;
        row.level = l;
        row.m = fine.m;
        row.h = fine.h;
        row.n = y_std.n;
        row.mean_std = y_std.mean();
        row.var_std = y_std.variance();
        row.mean_cgv = y_cgv.mean();
        row.var_cgv = y_cgv.variance();
        row.reduction = row.var_cgv > 0.0 ? row.var_std / row.var_cgv
                                          : std::numeric_limits<double>::quiet_NaN();
        row.work_std = work_std / static_cast<double>(y_std.n);
        row.work_cgv = work_cgv / static_cast<double>(y_cgv.n);
        res.rows.push_back(row);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Solver bench

BenchResult run_solver_bench(const ExperimentConfig& c)
{
    Problem p = make_problem(c);
    std::vector<Grid> grids;
    for (int l = 0; l <= c.levels; ++l)
        grids.push_back(p.hierarchy.grid(l));
    p.model->prepare(grids);

    BenchResult res;
    for (int l = 0; l <= c.levels; ++l) {
        const Grid& g = p.hierarchy.grid(l);

        struct Block {
            std::int64_t n = 0;
            double iters = 0.0, seconds = 0.0, work = 0.0;
        };
        const std::int64_t nblocks = (c.samples + kBlock - 1) / kBlock;
        std::vector<Block> partials(static_cast<std::size_t>(nblocks));

        parallel_for_blocks(0, c.samples, c.threads, kBlock,
                            [&](std::int64_t block, std::int64_t b0, std::int64_t b1) {
                                Block bs;
                                for (std::int64_t i = b0; i < b1; ++i) {
                                    RngStream rng =
                                        sample_stream(c.seed, StreamPurpose::BenchSample, l, i);
                                    const PermeabilitySample s = p.model->sample(g, rng);
                                    const auto t0 = std::chrono::steady_clock::now();
                                    const auto sys =
                                        assemble(g, s.values, p.mp.bc, p.mp.source, p.averaging);
                                    const auto rep =
                                        solve(sys, s.values, p.mp.bc, p.averaging, p.solver);
                                    bs.seconds += std::chrono::duration<double>(
                                                      std::chrono::steady_clock::now() - t0)
                                                      .count();
                                    bs.iters += rep.iterations;
                                    bs.work += rep.work_units;
                                    ++bs.n;
                                }
                                partials[static_cast<std::size_t>(block)] = bs;
                            });

        BenchRow row;
        row.m = g.m;
        row.dof = g.cells();
        for (const auto& bs : partials) {
            row.n += bs.n;
            row.mean_iterations += bs.iters;
            row.mean_seconds += bs.seconds;
            row.mean_work += bs.work;
        }
        row.mean_iterations /= static_cast<double>(row.n);
        row.mean_seconds /= static_cast<double>(row.n);
        row.mean_work /= static_cast<double>(row.n);
        row.work_per_dof = row.mean_work / static_cast<double>(row.dof);
        row.seconds_per_dof = row.mean_seconds / static_cast<double>(row.dof);
        res.rows.push_back(row);
    }
    return res;
}

// ---------------------------------------------------------------------------
// MLMC

MlmcExperimentResult run_mlmc_experiment(const ExperimentConfig& c)
{
    Problem p = make_problem(c);
    std::vector<Grid> grids;
    for (int l = 0; l <= c.levels; ++l)
        grids.push_back(p.hierarchy.grid(l));
    p.model->prepare(grids);

    MlmcOptions opt;
    opt.n_warmup = c.n_warmup;
    opt.initial_levels = std::min(3, c.levels + 1);
    opt.threads = c.threads;

    MlmcExperimentResult res;
    const Coupling coup = c.coupling == "cgv" ? Coupling::Cgv : Coupling::Standard;
    res.mlmc = mlmc_run(p, c.epsilon, coup, opt, c.seed);
    if (c.compare_mc) {
        res.has_mc = true;
        const int level = res.mlmc.levels.back().level;
        res.mc = mc_run(p, c.epsilon, level, opt, c.seed);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Serialisation

json convergence_summary(const ExperimentConfig& c, const ConvergenceResult& r)
{
    json j = envelope(c);
    json rows = json::array();
    for (const auto& row : r.rows)
        rows.push_back({{"level", row.level},
                        {"m", row.m},
                        {"h", row.h},
                        {"abs_err", row.abs_err},
                        {"err_se", row.err_se},
                        {"var_diff", row.var_diff},
                        {"var_diff_se", row.var_diff_se},
                        {"mean_q", row.mean_q}});
    j["result"] = {{"reference_level", r.reference_level},
                   {"reference_m", r.reference_m},
                   {"samples", r.samples},
                   {"levels", rows},
                   {"alpha", nan_to_null(r.alpha_fit.rate)},
                   {"c_alpha", nan_to_null(r.alpha_fit.constant)},
                   {"alpha_residual", r.alpha_fit.rms_residual},
                   {"beta", nan_to_null(r.beta_fit.rate)},
                   {"c_beta", nan_to_null(r.beta_fit.constant)},
                   {"beta_residual", r.beta_fit.rms_residual}};
    return j;
}

json cgv_summary(const ExperimentConfig& c, const CgvCompareResult& r)
{
    json j = envelope(c);
    json rows = json::array();
    for (const auto& row : r.rows)
        rows.push_back({{"level", row.level},
                        {"m", row.m},
                        {"h", row.h},
                        {"n", row.n},
                        {"mean_y_std", row.mean_std},
                        {"var_y_std", row.var_std},
                        {"mean_y_cgv", row.mean_cgv},
                        {"var_y_cgv", row.var_cgv},
                        {"reduction", nan_to_null(row.reduction)},
                        {"work_std", row.work_std},
                        {"work_cgv", row.work_cgv}});
    j["result"] = {{"samples", r.samples}, {"levels", rows}};
    return j;
}

json bench_summary(const ExperimentConfig& c, const BenchResult& r)
{
    json j = envelope(c);
    json rows = json::array();
    for (const auto& row : r.rows)
        rows.push_back({{"m", row.m},
                        {"dof", row.dof},
                        {"samples", row.n},
                        {"mean_iterations", row.mean_iterations},
                        {"mean_seconds", row.mean_seconds},
                        {"mean_work", row.mean_work},
                        {"work_per_dof", row.work_per_dof},
                        {"seconds_per_dof", row.seconds_per_dof}});
    j["result"] = {{"rows", rows}};
    return j;
}

json mlmc_summary(const ExperimentConfig& c, const MlmcExperimentResult& r)
{
    json j = envelope(c);
    json rows = json::array();
    for (const auto& lvl : r.mlmc.levels)
        rows.push_back({{"level", lvl.level},
                        {"m", lvl.m},
                        {"h", lvl.h},
                        {"n", lvl.n},
                        {"mean_y", lvl.mean_y},
                        {"var_y", lvl.var_y},
                        {"work_per_sample", lvl.mean_work},
                        {"seconds_per_sample", lvl.mean_seconds}});
    json res = {{"estimate", r.mlmc.estimate},
                {"epsilon", r.mlmc.eps},
                {"coupling", to_string(r.mlmc.coupling)},
                {"sampling_error", r.mlmc.sampling_error},
                {"bias", r.mlmc.bias},
                {"bias_squared", r.mlmc.bias * r.mlmc.bias},
                {"mse_bound", r.mlmc.mse_bound},
                {"alpha_used", r.mlmc.alpha_used},
                {"level_budget_exhausted", r.mlmc.level_budget_exhausted},
                {"total_work", r.mlmc.total_work},
                {"total_seconds", r.mlmc.total_seconds},
                {"levels", rows}};
    if (r.mlmc.rates_valid) {
        res["rates"] = {{"alpha", nan_to_null(r.mlmc.rates.alpha)},
                        {"beta", nan_to_null(r.mlmc.rates.beta)},
                        {"gamma", nan_to_null(r.mlmc.rates.gamma)},
                        {"c_alpha", nan_to_null(r.mlmc.rates.c_alpha)},
                        {"c_beta", nan_to_null(r.mlmc.rates.c_beta)},
                        {"c_gamma", nan_to_null(r.mlmc.rates.c_gamma)},
                        {"alpha_residual", r.mlmc.rates.alpha_residual},
                        {"beta_residual", r.mlmc.rates.beta_residual},
                        {"gamma_residual", r.mlmc.rates.gamma_residual}};
    }
    if (r.has_mc) {
        res["mc"] = {{"estimate", r.mc.estimate},
                     {"epsilon", r.mc.eps},
                     {"level", r.mc.level},
                     {"n", r.mc.n},
                     {"variance", r.mc.variance},
                     {"total_work", r.mc.total_work},
                     {"total_seconds", r.mc.total_seconds}};
    }
    j["result"] = res;
    return j;
}

std::string convergence_csv(const ConvergenceResult& r)
{
    std::ostringstream os;
    os << "level,m,h,abs_err,err_se,var_diff,var_diff_se,mean_q\n";
    for (const auto& row : r.rows)
        os << row.level << ',' << row.m << ',' << fmt(row.h) << ',' << fmt(row.abs_err) << ','
           << fmt(row.err_se) << ',' << fmt(row.var_diff) << ',' << fmt(row.var_diff_se) << ','
           << fmt(row.mean_q) << '\n';
    return os.str();
}

std::string cgv_csv(const CgvCompareResult& r)
{
    std::ostringstream os;
    os << "level,m,h,n,mean_y_std,var_y_std,mean_y_cgv,var_y_cgv,reduction,work_std,work_cgv\n";
    for (const auto& row : r.rows)
        os << row.level << ',' << row.m << ',' << fmt(row.h) << ',' << row.n << ','
           << fmt(row.mean_std) << ',' << fmt(row.var_std) << ',' << fmt(row.mean_cgv) << ','
           << fmt(row.var_cgv) << ',' << fmt(row.reduction) << ',' << fmt(row.work_std) << ','
           << fmt(row.work_cgv) << '\n';
    return os.str();
}

std::string bench_csv(const BenchResult& r)
{
    std::ostringstream os;
    os << "m,dof,samples,mean_iterations,mean_seconds,mean_work,work_per_dof,seconds_per_dof\n";
    for (const auto& row : r.rows)
        os << row.m << ',' << row.dof << ',' << row.n << ',' << fmt(row.mean_iterations) << ','
           << fmt(row.mean_seconds) << ',' << fmt(row.mean_work) << ',' << fmt(row.work_per_dof)
           << ',' << fmt(row.seconds_per_dof) << '\n';
    return os.str();
}

std::string mlmc_csv(const MLMCResult& r)
{
    std::ostringstream os;
    os << "level,m,h,n,mean_y,var_y,work_per_sample,seconds_per_sample\n";
    for (const auto& lvl : r.levels)
        os << lvl.level << ',' << lvl.m << ',' << fmt(lvl.h) << ',' << lvl.n << ','
           << fmt(lvl.mean_y) << ',' << fmt(lvl.var_y) << ',' << fmt(lvl.mean_work) << ','
           << fmt(lvl.mean_seconds) << '\n';
    return os.str();
}

json strip_timing(const json& j)
{
    if (j.is_object()) {
        json out = json::object();
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (it.key().find("seconds") != std::string::npos)
                continue;
            out[it.key()] = strip_timing(it.value());
        }
        return out;
    }
    if (j.is_array()) {
        json out = json::array();
        for (const auto& v : j)
            out.push_back(strip_timing(v));
        return out;
    }
    return j;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text)
{
    std::ofstream os(path);
    if (!os)
        throw std::runtime_error("cannot write " + path.string());
    os << text;
}

void write_debug_dumps(const ExperimentConfig& c)
{
    const std::filesystem::path dir(c.output_dir);
    const Problem p = make_problem(c);
    const Grid& g = p.hierarchy.grid(c.levels);
    RngStream rng = sample_stream(c.seed, StreamPurpose::Generic, c.levels, 0);
    const PermeabilitySample s = p.model->sample(g, rng);
    if (c.dump_field)
        write_field_binary(s, (dir / "field.bin").string());
    if (c.dump_residuals) {
        const auto sys = assemble(g, s.values, p.mp.bc, p.mp.source, p.averaging);
        const auto rep = solve(sys, s.values, p.mp.bc, p.averaging, p.solver);
        std::ostringstream os;
        os << "iteration,rel_residual\n";
        for (std::size_t i = 0; i < rep.residual_history.size(); ++i)
            os << (i + 1) << ',' << fmt(rep.residual_history[i]) << '\n';
        write_text(dir / "residuals.csv", os.str());
    }
}

} // namespace

json run_and_write(const ExperimentConfig& c)
{
    std::filesystem::create_directories(c.output_dir);
    const std::filesystem::path dir(c.output_dir);

    json summary;
    std::string csv;
    if (c.experiment == "convergence") {
        const auto r = run_convergence_study(c);
        summary = convergence_summary(c, r);
        csv = convergence_csv(r);
    } else if (c.experiment == "cgv-compare") {
        const auto r = run_cgv_comparison(c);
        summary = cgv_summary(c, r);
        csv = cgv_csv(r);
    } else if (c.experiment == "solver-bench") {
        const auto r = run_solver_bench(c);
        summary = bench_summary(c, r);
        csv = bench_csv(r);
    } else {
        const auto r = run_mlmc_experiment(c);
        summary = mlmc_summary(c, r);
        csv = mlmc_csv(r.mlmc);
    }

    write_text(dir / "levels.csv", csv);
    write_text(dir / "summary.json", summary.dump(2) + "\n");
    if (c.dump_field || c.dump_residuals)
        write_debug_dumps(c);
    return summary;
}

} // namespace mlmc
