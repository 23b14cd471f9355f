#pragma once

#include <array>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "mlmc/grid.hpp"

namespace mlmc {

enum class EdgeAverage { Harmonic, Arithmetic };

/// Permeability on the edge between two cells with values ka, kb > 0:
/// harmonic 2*ka*kb/(ka+kb) or arithmetic (ka+kb)/2.
double edge_permeability(double ka, double kb, EdgeAverage mode);

enum class BcType { Dirichlet, Neumann };

using BoundaryFn = std::function<double(const std::array<double, 3>&)>;
using SourceFn = std::function<double(const std::array<double, 3>&)>;

struct FaceCondition {
    BcType type = BcType::Dirichlet;
    BoundaryFn value; // psi_D (pressure) or psi_N (prescribed outward flux)
};

/// Conditions on the 2*dim faces of the unit cube. Face (axis, upper) is
/// x_{axis+1} = 1 if upper, else x_{axis+1} = 0.
struct BoundarySpec {
    std::array<FaceCondition, 6> faces{};

    FaceCondition& face(int axis, bool upper) { return faces[static_cast<std::size_t>(2 * axis + (upper ? 1 : 0))]; }
    const FaceCondition& face(int axis, bool upper) const
    {
        return faces[static_cast<std::size_t>(2 * axis + (upper ? 1 : 0))];
    }

    bool any_dirichlet(int dim) const;

    static BoundarySpec all_dirichlet(double value);
};

/// Sparse SPD system in 3/5/7-point stencil form. diag holds the row
/// diagonal; upper[a][c] the coefficient coupling cell c to its +e_a
/// neighbour (zero on the last slab of axis a). Symmetry is structural:
/// the lower coefficient is read from the neighbour's upper entry.
struct StencilSystem {
    Grid grid;
    std::vector<double> diag;
    std::array<std::vector<double>, 3> upper;
    std::vector<double> rhs;

    std::int64_t dof() const { return grid.cells(); }

    /// y = A x
    void apply(std::span<const double> x, std::span<double> y) const;

    /// Dense copy of A, row-major dof() x dof(). Intended for small systems.
    std::vector<double> dense() const;

    /// Coordinate text export "row col value" (0-based), one entry per line.
    void write_coo(std::ostream& os) const;
};

/// Assemble the cell-centred finite volume system for
/// -div(k grad p) = f with the given boundary conditions. Interior edge
/// coefficients are k_edge * h^{dim-2}; a Dirichlet face contributes
/// 2 k(cell) * h^{dim-2} to the diagonal (one-sided difference over h/2)
/// and the matching term to the rhs; a Neumann face moves the prescribed
/// flux psi_N(face midpoint) * h^{dim-1} to the rhs. Source entries use
/// the midpoint rule f(centre) * h^dim.
StencilSystem assemble(const Grid& grid, std::span<const double> k, const BoundarySpec& bc,
                       const SourceFn& f, EdgeAverage mode = EdgeAverage::Harmonic);

} // namespace mlmc
