#include "mlmc/grid.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mlmc {

Grid::Grid(int dim_, std::int64_t m_) : dim(dim_), m(m_), h(1.0 / static_cast<double>(m_))
{
    if (dim < 1 || dim > 3)
        throw std::invalid_argument("Grid: dim must be 1, 2 or 3");
    if (m < 1)
        throw std::invalid_argument("Grid: m must be positive");
}

std::int64_t Grid::cells() const
{
    std::int64_t n = 1;
    for (int a = 0; a < dim; ++a)
        n *= m;
    return n;
}

std::int64_t Grid::lin(const MultiIndex& idx) const
{
    std::int64_t l = 0;
    for (int a = 0; a < dim; ++a)
        l = l * m + (idx[static_cast<std::size_t>(a)] - 1);
    return l;
}

MultiIndex Grid::delin(std::int64_t lin_idx) const
{
    MultiIndex idx{1, 1, 1};
    for (int a = dim - 1; a >= 0; --a) {
        idx[static_cast<std::size_t>(a)] = lin_idx % m + 1;
        lin_idx /= m;
    }
    return idx;
}

std::array<double, 3> Grid::centre(const MultiIndex& idx) const
{
    std::array<double, 3> x{0.0, 0.0, 0.0};
    for (int a = 0; a < dim; ++a)
        x[static_cast<std::size_t>(a)] = (static_cast<double>(idx[static_cast<std::size_t>(a)]) - 0.5) * h;
    return x;
}

std::int64_t Grid::stride(int axis) const
{
    std::int64_t s = 1;
    for (int a = dim - 1; a > axis; --a)
        s *= m;
    return s;
}

GridHierarchy build_hierarchy(int dim, std::int64_t m0, int refinement, int levels,
                              std::int64_t cell_budget)
{
    if (dim < 1 || dim > 3)
        throw std::invalid_argument("build_hierarchy: dim must be 1, 2 or 3");
    if (m0 < 2)
        throw std::invalid_argument("build_hierarchy: m0 must be >= 2");
    if (refinement < 2)
        throw std::invalid_argument("build_hierarchy: refinement factor must be >= 2");
    if (levels < 0)
        throw std::invalid_argument("build_hierarchy: levels must be >= 0");

    // overflow-safe budget check on the finest grid
    const double finest_m = static_cast<double>(m0) * std::pow(static_cast<double>(refinement), levels);
    if (std::pow(finest_m, dim) > static_cast<double>(cell_budget))
        throw std::invalid_argument("build_hierarchy: finest grid exceeds cell budget (" +
                                    std::to_string(cell_budget) + " cells)");

    GridHierarchy hier;
    hier.refinement = refinement;
    std::int64_t m = m0;
    for (int l = 0; l <= levels; ++l) {
        hier.grids.emplace_back(dim, m);
        m *= refinement;
    }
    return hier;
}

std::vector<std::array<int, 3>> parity_offsets(int dim)
{
    if (dim < 1 || dim > 3)
        throw std::invalid_argument("parity_offsets: dim must be 1, 2 or 3");
    std::vector<std::array<int, 3>> offsets;
    const int count = 1 << dim;
    offsets.reserve(static_cast<std::size_t>(count));
    for (int code = 0; code < count; ++code) {
        std::array<int, 3> off{0, 0, 0};
        for (int a = 0; a < dim; ++a)
            off[static_cast<std::size_t>(a)] = (code >> (dim - 1 - a)) & 1;
        offsets.push_back(off);
    }
    return offsets;
}

Grid coarsen(const Grid& fine)
{
    if (fine.m % 2 != 0)
        throw std::invalid_argument("coarsen: fine grid must have even m");
    return Grid(fine.dim, fine.m / 2);
}

std::vector<std::int64_t> subgrid_index_map(const Grid& fine, const std::array<int, 3>& offset)
{
    if (fine.m % 2 != 0)
        throw std::invalid_argument("subgrid_index_map: fine grid must have even m");
    for (int a = 0; a < fine.dim; ++a)
        if (offset[static_cast<std::size_t>(a)] != 0 && offset[static_cast<std::size_t>(a)] != 1)
            throw std::invalid_argument("subgrid_index_map: offset entries must be 0 or 1");

    const Grid coarse = coarsen(fine);
    std::vector<std::int64_t> map(static_cast<std::size_t>(coarse.cells()));
    for (std::int64_t c = 0; c < coarse.cells(); ++c) {
        MultiIndex cj = coarse.delin(c);
        MultiIndex fi{1, 1, 1};
        for (int a = 0; a < fine.dim; ++a)
            fi[static_cast<std::size_t>(a)] =
                2 * cj[static_cast<std::size_t>(a)] - 1 + offset[static_cast<std::size_t>(a)];
        map[static_cast<std::size_t>(c)] = fine.lin(fi);
    }
    return map;
}

} // namespace mlmc
