#include "mlmc/problem.hpp"

#include <chrono>
#include <stdexcept>

namespace mlmc {

ModelProblem model_problem_1(int dim)
{
    ModelProblem mp;
    mp.name = "model_problem_1";
    mp.bc = BoundarySpec::all_dirichlet(0.0);
    mp.source = [](const std::array<double, 3>&) { return 1.0; };
    mp.default_qoi.kind = QoISpec::Kind::LocalAverage;
    mp.default_qoi.centre = {0.5, 0.5, 0.5};
    mp.default_qoi.side = 0.5;
    (void)dim;
    return mp;
}

ModelProblem model_problem_2(int dim)
{
    ModelProblem mp;
    mp.name = "model_problem_2";
    for (int a = 0; a < 3; ++a) {
        for (bool up : {false, true}) {
            auto& fc = mp.bc.face(a, up);
            fc.type = BcType::Neumann;
            fc.value = [](const std::array<double, 3>&) { return 0.0; };
        }
    }
    mp.bc.face(0, false).type = BcType::Dirichlet;
    mp.bc.face(0, false).value = [](const std::array<double, 3>&) { return 1.0; };
    mp.bc.face(0, true).type = BcType::Dirichlet;
    mp.bc.face(0, true).value = [](const std::array<double, 3>&) { return 0.0; };
    mp.source = [](const std::array<double, 3>&) { return 0.0; };
    mp.default_qoi.kind = QoISpec::Kind::Outflow;
    mp.default_qoi.outflow_axis = 0;
    mp.default_qoi.outflow_upper = true;
    (void)dim;
    return mp;
}

ModelProblem make_model_problem(const std::string& name, int dim)
{
    if (name == "model_problem_1")
        return model_problem_1(dim);
    if (name == "model_problem_2")
        return model_problem_2(dim);
    throw std::invalid_argument("unknown model problem: " + name);
}

Evaluation evaluate_sample(const Problem& problem, const PermeabilitySample& sample)
{
    const auto t0 = std::chrono::steady_clock::now();
    const StencilSystem sys =
        assemble(sample.grid, sample.values, problem.mp.bc, problem.mp.source, problem.averaging);
    const SolveReport rep =
        solve(sys, sample.values, problem.mp.bc, problem.averaging, problem.solver);
    Evaluation ev;
    ev.q = evaluate_qoi(problem.qoi, rep.solution, sample.values, sample.grid, problem.mp.bc);
    ev.solve_work = rep.work_units;
    ev.iterations = rep.iterations;
    ev.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return ev;
}

} // namespace mlmc
