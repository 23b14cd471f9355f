#include "mlmc/assembly.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>

namespace mlmc {

double edge_permeability(double ka, double kb, EdgeAverage mode)
{
    if (!(ka > 0.0) || !(kb > 0.0))
        throw std::invalid_argument("edge_permeability: cell values must be positive");
    switch (mode) {
    case EdgeAverage::Harmonic:
        return 2.0 * ka * kb / (ka + kb);
    case EdgeAverage::Arithmetic:
        return 0.5 * (ka + kb);
    }
    throw std::invalid_argument("edge_permeability: unknown mode");
}

bool BoundarySpec::any_dirichlet(int dim) const
{
    for (int a = 0; a < dim; ++a)
        for (bool up : {false, true})
            if (face(a, up).type == BcType::Dirichlet)
                return true;
    return false;
}

BoundarySpec BoundarySpec::all_dirichlet(double value)
{
    BoundarySpec bc;
    for (auto& fc : bc.faces) {
        fc.type = BcType::Dirichlet;
        fc.value = [value](const std::array<double, 3>&) { return value; };
    }
    return bc;
}

void StencilSystem::apply(std::span<const double> x, std::span<double> y) const
{
    const std::int64_t n = dof();
    for (std::int64_t c = 0; c < n; ++c)
        y[static_cast<std::size_t>(c)] = diag[static_cast<std::size_t>(c)] * x[static_cast<std::size_t>(c)];
    for (int a = 0; a < grid.dim; ++a) {
        const std::int64_t str = grid.stride(a);
        const auto& up = upper[static_cast<std::size_t>(a)];
        for (std::int64_t c = 0; c < n; ++c) {
            const double w = up[static_cast<std::size_t>(c)];
            if (w != 0.0) {
                y[static_cast<std::size_t>(c)] += w * x[static_cast<std::size_t>(c + str)];
                y[static_cast<std::size_t>(c + str)] += w * x[static_cast<std::size_t>(c)];
            }
        }
    }
}

std::vector<double> StencilSystem::dense() const
{
    const std::int64_t n = dof();
    std::vector<double> a(static_cast<std::size_t>(n * n), 0.0);
    for (std::int64_t c = 0; c < n; ++c)
        a[static_cast<std::size_t>(c * n + c)] = diag[static_cast<std::size_t>(c)];
    for (int ax = 0; ax < grid.dim; ++ax) {
        const std::int64_t str = grid.stride(ax);
        const auto& up = upper[static_cast<std::size_t>(ax)];
        for (std::int64_t c = 0; c < n; ++c) {
            const double w = up[static_cast<std::size_t>(c)];
            if (w != 0.0) {
                a[static_cast<std::size_t>(c * n + c + str)] = w;
                a[static_cast<std::size_t>((c + str) * n + c)] = w;
            }
        }
    }
    return a;
}

void StencilSystem::write_coo(std::ostream& os) const
{
    const std::int64_t n = dof();
    for (std::int64_t c = 0; c < n; ++c) {
        os << c << ' ' << c << ' ' << diag[static_cast<std::size_t>(c)] << '\n';
        for (int ax = 0; ax < grid.dim; ++ax) {
            const std::int64_t str = grid.stride(ax);
            const double w = upper[static_cast<std::size_t>(ax)][static_cast<std::size_t>(c)];
            if (w != 0.0) {
                os << c << ' ' << (c + str) << ' ' << w << '\n';
                os << (c + str) << ' ' << c << ' ' << w << '\n';
            }
        }
    }
}

StencilSystem assemble(const Grid& grid, std::span<const double> k, const BoundarySpec& bc,
                       const SourceFn& f, EdgeAverage mode)
{
    const std::int64_t n = grid.cells();
    if (static_cast<std::int64_t>(k.size()) != n)
        throw std::invalid_argument("assemble: permeability size does not match grid");
    if (!bc.any_dirichlet(grid.dim))
        throw std::invalid_argument("assemble: pure-Neumann problem is singular; need a Dirichlet face");
    for (std::int64_t c = 0; c < n; ++c)
        if (!(k[static_cast<std::size_t>(c)] > 0.0))
            throw std::invalid_argument("assemble: permeability must be strictly positive");

    const int d = grid.dim;
    const double h = grid.h;
    const double edge_scale = std::pow(h, d - 2); // flux coefficient k * h^{d-2}
    const double face_area = std::pow(h, d - 1);
    const double volume = std::pow(h, d);

    StencilSystem sys;
    sys.grid = grid;
    sys.diag.assign(static_cast<std::size_t>(n), 0.0);
    sys.rhs.assign(static_cast<std::size_t>(n), 0.0);
    for (int a = 0; a < d; ++a)
        sys.upper[static_cast<std::size_t>(a)].assign(static_cast<std::size_t>(n), 0.0);

    for (std::int64_t c = 0; c < n; ++c) {
        const MultiIndex idx = grid.delin(c);
        const auto x = grid.centre(idx);
        sys.rhs[static_cast<std::size_t>(c)] += f(x) * volume;

        for (int a = 0; a < d; ++a) {
            const std::int64_t ia = idx[static_cast<std::size_t>(a)];
            const std::int64_t str = grid.stride(a);

            // interior edge to the +e_a neighbour, visited once from the lower cell
            if (ia < grid.m) {
                const double w = edge_scale * edge_permeability(k[static_cast<std::size_t>(c)],
                                                                k[static_cast<std::size_t>(c + str)], mode);
                sys.diag[static_cast<std::size_t>(c)] += w;
                sys.diag[static_cast<std::size_t>(c + str)] += w;
                sys.upper[static_cast<std::size_t>(a)][static_cast<std::size_t>(c)] = -w;
            }

            for (bool up : {false, true}) {
                if ((up && ia != grid.m) || (!up && ia != 1))
                    continue;
                auto mid = x;
                mid[static_cast<std::size_t>(a)] = up ? 1.0 : 0.0;
                const FaceCondition& fc = bc.face(a, up);
                if (fc.type == BcType::Dirichlet) {
                    // one-sided difference over h/2
                    const double w = 2.0 * k[static_cast<std::size_t>(c)] * edge_scale;
                    sys.diag[static_cast<std::size_t>(c)] += w;
                    sys.rhs[static_cast<std::size_t>(c)] += w * (fc.value ? fc.value(mid) : 0.0);
                } else {
                    // prescribed outward flux, midpoint rule over the face
                    const double psi = fc.value ? fc.value(mid) : 0.0;
                    sys.rhs[static_cast<std::size_t>(c)] -= psi * face_area;
                }
            }
        }
    }
    return sys;
}

} // namespace mlmc
