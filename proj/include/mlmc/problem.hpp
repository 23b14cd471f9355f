#pragma once

#include <memory>
#include <string>

#include "mlmc/assembly.hpp"
#include "mlmc/fields.hpp"
#include "mlmc/grid.hpp"
#include "mlmc/qoi.hpp"
#include "mlmc/solver.hpp"

namespace mlmc {

/// A boundary value problem with its natural quantity of interest.
struct ModelProblem {
    std::string name;
    BoundarySpec bc;
    SourceFn source;
    QoISpec default_qoi;
};

/// -div(k grad p) = 1 on the unit cube, homogeneous Dirichlet conditions;
/// QoI is the local average of p over a box around the domain centre.
ModelProblem model_problem_1(int dim);

/// div(k grad p) = 0 with p = 1 at x1 = 0, p = 0 at x1 = 1 and zero Neumann
/// conditions elsewhere; QoI is the outflow through the face x1 = 1.
ModelProblem model_problem_2(int dim);

/// Lookup by name ("model_problem_1" / "model_problem_2").
ModelProblem make_model_problem(const std::string& name, int dim);

/// Everything needed to evaluate the quantity of interest at any level for
/// any permeability sample.
struct Problem {
    GridHierarchy hierarchy;
    std::shared_ptr<const PermeabilityModel> model;
    ModelProblem mp;
    QoISpec qoi;
    EdgeAverage averaging = EdgeAverage::Harmonic;
    SolverConfig solver;
};

struct Evaluation {
    double q = 0.0;
    double solve_work = 0.0;
    double seconds = 0.0;
    int iterations = 0;
};

/// Assemble, solve (V-cycle PCG) and evaluate the QoI on the sample's grid.
Evaluation evaluate_sample(const Problem& problem, const PermeabilitySample& sample);

} // namespace mlmc
