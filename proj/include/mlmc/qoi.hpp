#pragma once

#include <array>
#include <span>

#include "mlmc/assembly.hpp"
#include "mlmc/grid.hpp"

namespace mlmc {

/// Quantity of interest: either a local average of the pressure over an
/// axis-aligned box, or the outward flux through a boundary face.
struct QoISpec {
    enum class Kind { LocalAverage, Outflow };

    Kind kind = Kind::LocalAverage;
    std::array<double, 3> centre{0.5, 0.5, 0.5};
    double side = 0.25;
    int outflow_axis = 0;
    bool outflow_upper = true;
};

/// Mean of the solution over the cells of the axis-aligned box
/// [centre - side/2, centre + side/2]^dim. The box edges must lie on cell
/// boundaries of this grid; otherwise throws std::invalid_argument.
double local_average(std::span<const double> u, const Grid& grid,
                     const std::array<double, 3>& centre, double side);

/// Outward flux through a domain face: sum over face-adjacent cells of
/// 2 k(cell) (p(cell) - psi_D(face midpoint)) / h * h^{dim-1}, the same
/// one-sided difference used in assembly. The face must carry a Dirichlet
/// condition.
double face_flux(std::span<const double> u, std::span<const double> k, const Grid& grid,
                 const BoundarySpec& bc, int axis, bool upper);

/// The outflow functional: outward flux through the (axis, upper) face.
inline double outflow(std::span<const double> u, std::span<const double> k, const Grid& grid,
                      const BoundarySpec& bc, int axis = 0, bool upper = true)
{
    return face_flux(u, k, grid, bc, axis, upper);
}

double evaluate_qoi(const QoISpec& spec, std::span<const double> u, std::span<const double> k,
                    const Grid& grid, const BoundarySpec& bc);

} // namespace mlmc
