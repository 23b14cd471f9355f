#include "mlmc/qoi.hpp"

#include <cmath>
#include <stdexcept>

namespace mlmc {

namespace {

/// Cell-boundary coordinate as an integer multiple of h, or -1 if unaligned.
std::int64_t aligned_edge(double x, std::int64_t m)
{
    const double scaled = x * static_cast<double>(m);
    const double rounded = std::round(scaled);
    if (std::abs(scaled - rounded) > 1e-9 * static_cast<double>(m))
        return -1;
    return static_cast<std::int64_t>(rounded);
}

} // namespace

double local_average(std::span<const double> u, const Grid& grid,
                     const std::array<double, 3>& centre, double side)
{
    const int d = grid.dim;
    std::array<std::int64_t, 3> lo{0, 0, 0}, hi{1, 1, 1};
    for (int a = 0; a < d; ++a) {
        const double boxlo = centre[static_cast<std::size_t>(a)] - 0.5 * side;
        const double boxhi = centre[static_cast<std::size_t>(a)] + 0.5 * side;
        const std::int64_t elo = aligned_edge(boxlo, grid.m);
        const std::int64_t ehi = aligned_edge(boxhi, grid.m);
        if (elo < 0 || ehi < 0 || elo >= ehi || boxlo < -1e-12 || boxhi > 1.0 + 1e-12)
            throw std::invalid_argument("local_average: box not resolvable on this grid");
        lo[static_cast<std::size_t>(a)] = elo;
        hi[static_cast<std::size_t>(a)] = ehi;
    }

    double sum = 0.0;
    std::int64_t count = 0;
    // iterate over cells with lo_a < i_a <= hi_a (1-based)
    MultiIndex idx{1, 1, 1};
    for (int a = 0; a < d; ++a)
        idx[static_cast<std::size_t>(a)] = lo[static_cast<std::size_t>(a)] + 1;
    while (true) {
        sum += u[static_cast<std::size_t>(grid.lin(idx))];
        ++count;
        int a = d - 1;
        for (; a >= 0; --a) {
            if (++idx[static_cast<std::size_t>(a)] <= hi[static_cast<std::size_t>(a)])
                break;
            idx[static_cast<std::size_t>(a)] = lo[static_cast<std::size_t>(a)] + 1;
        }
        if (a < 0)
            break;
    }
    return sum / static_cast<double>(count);
}

double face_flux(std::span<const double> u, std::span<const double> k, const Grid& grid,
                 const BoundarySpec& bc, int axis, bool upper)
{
    const FaceCondition& fc = bc.face(axis, upper);
    if (fc.type != BcType::Dirichlet)
        throw std::invalid_argument(
            "face_flux: face carries a Neumann condition; flux is prescribed data");

    const int d = grid.dim;
    const double face_area = std::pow(grid.h, d - 1);
    double total = 0.0;

    // iterate over boundary cells of the face
    MultiIndex idx{1, 1, 1};
    idx[static_cast<std::size_t>(axis)] = upper ? grid.m : 1;
    while (true) {
        const std::int64_t c = grid.lin(idx);
        auto mid = grid.centre(idx);
        mid[static_cast<std::size_t>(axis)] = upper ? 1.0 : 0.0;
        const double psi = fc.value ? fc.value(mid) : 0.0;
        total += 2.0 * k[static_cast<std::size_t>(c)] *
                 (u[static_cast<std::size_t>(c)] - psi) / grid.h * face_area;

        int a = d - 1;
        for (; a >= 0; --a) {
            if (a == axis)
                continue;
            if (++idx[static_cast<std::size_t>(a)] <= grid.m)
                break;
            idx[static_cast<std::size_t>(a)] = 1;
        }
        if (a < 0)
            break;
    }
    return total;
}

double evaluate_qoi(const QoISpec& spec, std::span<const double> u, std::span<const double> k,
                    const Grid& grid, const BoundarySpec& bc)
{
    switch (spec.kind) {
    case QoISpec::Kind::LocalAverage:
        return local_average(u, grid, spec.centre, spec.side);
    case QoISpec::Kind::Outflow:
        return outflow(u, k, grid, bc, spec.outflow_axis, spec.outflow_upper);
    }
    throw std::invalid_argument("evaluate_qoi: unknown kind");
}

} // namespace mlmc
