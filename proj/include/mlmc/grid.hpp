#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace mlmc {

/// Multi-index into a structured grid, 1-based in each of the first `dim`
/// coordinates. Unused trailing entries are 1.
using MultiIndex = std::array<std::int64_t, 3>;

/// Uniform cell-centred grid on the unit cube (0,1)^dim with m cells per
/// coordinate direction and mesh width h = 1/m. Immutable after construction
/// and safe to share across threads.
struct Grid {
    int dim = 2;
    std::int64_t m = 1;
    double h = 1.0;

    Grid() = default;
    Grid(int dim_, std::int64_t m_);

    std::int64_t cells() const;

    /// Linear storage index of a 1-based multi-index; the last coordinate
    /// varies fastest.
    std::int64_t lin(const MultiIndex& idx) const;

    MultiIndex delin(std::int64_t lin_idx) const;

    /// Centre of cell (i_1,...,i_d): ((i_1 - 1/2) h, ..., (i_d - 1/2) h).
    std::array<double, 3> centre(const MultiIndex& idx) const;

    /// Stride of axis a (0-based) in the linearised ordering.
    std::int64_t stride(int axis) const;

    bool operator==(const Grid& other) const { return dim == other.dim && m == other.m; }
};

/// Nested family of grids h_l = s^{-l} h_0 over the unit cube.
struct GridHierarchy {
    int refinement = 2;
    std::vector<Grid> grids; // grids[l] has m0 * s^l cells per direction

    const Grid& grid(int level) const { return grids.at(static_cast<std::size_t>(level)); }
    int finest_level() const { return static_cast<int>(grids.size()) - 1; }
};

/// Default guard against runaway refinement requests (cells per grid).
inline constexpr std::int64_t kDefaultCellBudget = std::int64_t(1) << 27;

/// Build L+1 nested grids with m_l = m0 * s^l cells per direction.
/// Throws std::invalid_argument on bad parameters or if the finest grid
/// exceeds the cell budget.
GridHierarchy build_hierarchy(int dim, std::int64_t m0, int refinement, int levels,
                              std::int64_t cell_budget = kDefaultCellBudget);

/// All 2^dim parity offsets in {0,1}^dim, lexicographic (last coordinate
/// fastest): d=2 gives (0,0),(0,1),(1,0),(1,1).
std::vector<std::array<int, 3>> parity_offsets(int dim);

/// Grid with half as many cells per direction. Requires fine.m even.
Grid coarsen(const Grid& fine);

/// For each coarse cell (linear order) the linear index of the associated
/// fine cell: coarse (j_1,...,j_d) maps to fine (2 j_k - 1 + offset_k).
/// Requires fine.m even.
std::vector<std::int64_t> subgrid_index_map(const Grid& fine, const std::array<int, 3>& offset);

} // namespace mlmc
