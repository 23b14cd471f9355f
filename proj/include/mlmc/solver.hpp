#pragma once

#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

#include "mlmc/assembly.hpp"
#include "mlmc/grid.hpp"

namespace mlmc {

struct SolverConfig {
    double tol = 1e-10;     // relative residual |r_m|/|r_0|
    int max_iter = 500;
    int smoother_sweeps = 2; // symmetric Gauss-Seidel sweeps, pre and post
};

/// Result of a linear solve. rel_residual is always <= the requested
/// tolerance; failures throw SolverError instead.
struct SolveReport {
    std::vector<double> solution;
    int iterations = 0;
    double rel_residual = 0.0;
    double seconds = 0.0;
    double work_units = 0.0; // dof * (iterations + 1)
    std::vector<double> residual_history;
};

class SolverError : public std::runtime_error {
public:
    SolverError(const std::string& msg, std::vector<double> history)
        : std::runtime_error(msg), residual_history(std::move(history))
    {
    }
    std::vector<double> residual_history;
};

class Preconditioner {
public:
    virtual ~Preconditioner() = default;
    /// z = B r with a fixed (linear, SPD) operator B.
    virtual void apply(std::span<const double> r, std::span<double> z) const = 0;
};

class IdentityPreconditioner final : public Preconditioner {
public:
    void apply(std::span<const double> r, std::span<double> z) const override;
};

/// Fixed number of symmetric Gauss-Seidel sweeps from a zero initial guess.
class SgsPreconditioner final : public Preconditioner {
public:
    SgsPreconditioner(const StencilSystem& system, int sweeps = 2);
    void apply(std::span<const double> r, std::span<double> z) const override;

private:
    const StencilSystem* system_;
    int sweeps_;
};

/// Geometric multigrid V-cycle on the nested coarsenings of the system grid.
/// Coarse operators are re-discretisations with the permeability coarsened by
/// harmonic averaging of the 2^d child cells; transfers are bilinear
/// interpolation and its transpose; the coarsest level is solved directly.
/// Falls back to smoother-only application when the grid cannot be coarsened.
/// Instances hold scratch space and must be confined to one thread at a time.
class VcyclePreconditioner final : public Preconditioner {
public:
    VcyclePreconditioner(const Grid& grid, std::span<const double> k, const BoundarySpec& bc,
                         EdgeAverage mode, int smoother_sweeps = 2);
    ~VcyclePreconditioner();
    VcyclePreconditioner(VcyclePreconditioner&&) noexcept;
    VcyclePreconditioner& operator=(VcyclePreconditioner&&) noexcept;
    VcyclePreconditioner(const VcyclePreconditioner&) = delete;
    VcyclePreconditioner& operator=(const VcyclePreconditioner&) = delete;

    void apply(std::span<const double> r, std::span<double> z) const override;

    int levels() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Preconditioned conjugate gradients for the SPD stencil system.
/// Throws SolverError (with the residual history attached) if the relative
/// residual does not reach tol within max_iter iterations.
SolveReport pcg(const StencilSystem& system, const Preconditioner& precond, double tol = 1e-10,
                int max_iter = 500);

/// Assembles the V-cycle preconditioner for the system and runs PCG.
SolveReport solve(const StencilSystem& system, std::span<const double> k, const BoundarySpec& bc,
                  EdgeAverage mode, const SolverConfig& config = {});

/// Dense Cholesky solve; fallback for small systems and reference oracle.
/// Throws std::invalid_argument above max_dof.
std::vector<double> direct_solve(const StencilSystem& system, std::int64_t max_dof = 20000);

} // namespace mlmc
