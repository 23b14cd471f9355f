#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mlmc/estimators.hpp"
#include "mlmc/problem.hpp"

namespace mlmc {

using json = nlohmann::json;

/// Fully resolved experiment description. Parsed from a JSON config file and
/// echoed verbatim (with defaults filled in) into every output for
/// provenance; re-running from the echoed config reproduces all statistical
/// outputs exactly.
struct ExperimentConfig {
    std::string experiment = "mlmc"; // mlmc | convergence | cgv-compare | solver-bench
    std::string problem = "model_problem_2";
    int dimension = 2;

    // permeability model
    std::string model = "lognormal"; // lognormal | piecewise_constant | piecewise_correlated
    GaussianFieldSpec field;                      // lognormal
    std::array<NormalSpec, 3> const_layers{};     // piecewise_constant
    std::array<GaussianFieldSpec, 3> corr_layers; // piecewise_correlated

    // grids
    std::int64_t m0 = 8;
    int refinement = 2;
    int levels = 3;
    int reference_level = -1; // convergence default: levels + 1

    std::int64_t samples = 1000; // convergence / cgv-compare / solver-bench
    double epsilon = 0.01;       // mlmc
    std::string coupling = "standard";
    int n_warmup = 100;
    bool compare_mc = false;

    bool qoi_override = false;
    QoISpec qoi;
    SolverConfig solver;

    std::uint64_t seed = 0;
    int threads = 1;
    std::string output_dir = "out";
    bool dump_field = false;
    bool dump_residuals = false;
};

/// Parse and validate; error messages name the offending config path.
ExperimentConfig config_from_json(const json& j);
ExperimentConfig load_config_file(const std::string& path);

/// Canonical echo with every field present.
json config_to_json(const ExperimentConfig& c);

/// FNV-1a over the canonical serialisation.
std::uint64_t config_hash(const json& canonical);

std::shared_ptr<const PermeabilityModel> make_model(const ExperimentConfig& c);

/// Problem over levels 0..levels (the hierarchy used by mlmc runs).
Problem make_problem(const ExperimentConfig& c, int finest_level = -1);

// ---------------------------------------------------------------------------
// Convergence study (reference-grid errors and level-difference variances)

struct ConvergenceRow {
    int level = 0;
    std::int64_t m = 0;
    double h = 0.0;
    double abs_err = 0.0; // |mean(Q_ref - Q_l)|
    double err_se = 0.0;
    double var_diff = 0.0; // V[Q_l - Q_{l-1}], level >= 1
    double var_diff_se = 0.0;
    double mean_q = 0.0;
};

struct ConvergenceResult {
    std::vector<ConvergenceRow> rows;
    int reference_level = 0;
    std::int64_t reference_m = 0;
    std::int64_t samples = 0;
    PowerFit alpha_fit; // on abs_err over levels 0..L
    PowerFit beta_fit;  // on var_diff over levels 1..L
};

ConvergenceResult run_convergence_study(const ExperimentConfig& c);

// ---------------------------------------------------------------------------
// CGV comparison: V[Y_l] with standard and CGV couplings at identical
// per-sample seeds

struct CgvCompareRow {
    int level = 0;
    std::int64_t m = 0;
    double h = 0.0;
    std::int64_t n = 0;
    double mean_std = 0.0, var_std = 0.0;
    double mean_cgv = 0.0, var_cgv = 0.0;
    double reduction = 0.0; // var_std / var_cgv, NaN when var_cgv = 0
    double work_std = 0.0, work_cgv = 0.0; // mean work units per sample
};

struct CgvCompareResult {
    std::vector<CgvCompareRow> rows;
    std::int64_t samples = 0;
};

CgvCompareResult run_cgv_comparison(const ExperimentConfig& c);

// ---------------------------------------------------------------------------
// Solver scalability bench

struct BenchRow {
    std::int64_t m = 0;
    std::int64_t dof = 0;
    std::int64_t n = 0;
    double mean_iterations = 0.0;
    double mean_seconds = 0.0;
    double mean_work = 0.0;
    double work_per_dof = 0.0;
    double seconds_per_dof = 0.0;
};

struct BenchResult {
    std::vector<BenchRow> rows;
};

BenchResult run_solver_bench(const ExperimentConfig& c);

// ---------------------------------------------------------------------------
// MLMC / MC runs

struct MlmcExperimentResult {
    MLMCResult mlmc;
    bool has_mc = false;
    MCResult mc;
};

MlmcExperimentResult run_mlmc_experiment(const ExperimentConfig& c);

// ---------------------------------------------------------------------------
// Output files: levels.csv + summary.json under the output directory
// (plus field.bin / residuals.csv when requested). Serialisers are exposed
// so tests can check determinism without touching the filesystem.

json convergence_summary(const ExperimentConfig&, const ConvergenceResult&);
json cgv_summary(const ExperimentConfig&, const CgvCompareResult&);
json bench_summary(const ExperimentConfig&, const BenchResult&);
json mlmc_summary(const ExperimentConfig&, const MlmcExperimentResult&);

std::string convergence_csv(const ConvergenceResult&);
std::string cgv_csv(const CgvCompareResult&);
std::string bench_csv(const BenchResult&);
std::string mlmc_csv(const MLMCResult&);

/// Run the experiment named in the config and write its outputs.
/// Returns the summary json.
json run_and_write(const ExperimentConfig& c);

/// Recursively drop keys containing "seconds" (wall-time fields), for
/// determinism comparisons.
json strip_timing(const json& j);

} // namespace mlmc
