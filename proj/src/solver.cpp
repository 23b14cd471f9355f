#include "mlmc/solver.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstring>
#include <numeric>

namespace mlmc {

namespace {

double dot(std::span<const double> a, std::span<const double> b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += a[i] * b[i];
    return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// One forward or backward Gauss-Seidel sweep on A x = b.
void gs_sweep(const StencilSystem& A, std::span<const double> b, std::span<double> x, bool forward)
{
    const std::int64_t n = A.dof();
    const int d = A.grid.dim;
    std::array<std::int64_t, 3> strides{};
    for (int a = 0; a < d; ++a)
        strides[static_cast<std::size_t>(a)] = A.grid.stride(a);

    auto update = [&](std::int64_t c) {
        double s = b[static_cast<std::size_t>(c)];
        for (int a = 0; a < d; ++a) {
            const std::int64_t str = strides[static_cast<std::size_t>(a)];
            const double wu = A.upper[static_cast<std::size_t>(a)][static_cast<std::size_t>(c)];
            if (wu != 0.0)
                s -= wu * x[static_cast<std::size_t>(c + str)];
            if (c - str >= 0) {
                const double wl = A.upper[static_cast<std::size_t>(a)][static_cast<std::size_t>(c - str)];
                if (wl != 0.0)
                    s -= wl * x[static_cast<std::size_t>(c - str)];
            }
        }
        x[static_cast<std::size_t>(c)] = s / A.diag[static_cast<std::size_t>(c)];
    };

    if (forward)
        for (std::int64_t c = 0; c < n; ++c)
            update(c);
    else
        for (std::int64_t c = n - 1; c >= 0; --c)
            update(c);
}

/// sweeps symmetric Gauss-Seidel iterations (forward+backward each).
void sgs_smooth(const StencilSystem& A, std::span<const double> b, std::span<double> x, int sweeps)
{
    for (int s = 0; s < sweeps; ++s) {
        gs_sweep(A, b, x, true);
        gs_sweep(A, b, x, false);
    }
}

Eigen::MatrixXd to_eigen(const StencilSystem& A)
{
    const std::int64_t n = A.dof();
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
    for (std::int64_t c = 0; c < n; ++c)
        m(c, c) = A.diag[static_cast<std::size_t>(c)];
    for (int a = 0; a < A.grid.dim; ++a) {
        const std::int64_t str = A.grid.stride(a);
        for (std::int64_t c = 0; c < n; ++c) {
            const double w = A.upper[static_cast<std::size_t>(a)][static_cast<std::size_t>(c)];
            if (w != 0.0) {
                m(c, c + str) = w;
                m(c + str, c) = w;
            }
        }
    }
    return m;
}

} // namespace

void IdentityPreconditioner::apply(std::span<const double> r, std::span<double> z) const
{
    std::copy(r.begin(), r.end(), z.begin());
}

SgsPreconditioner::SgsPreconditioner(const StencilSystem& system, int sweeps)
    : system_(&system), sweeps_(sweeps)
{
}

void SgsPreconditioner::apply(std::span<const double> r, std::span<double> z) const
{
    std::fill(z.begin(), z.end(), 0.0);
    sgs_smooth(*system_, r, z, sweeps_);
}

// ---------------------------------------------------------------------------
// V-cycle

namespace {

/// Coarse permeability: harmonic mean over the 2^d children of each coarse cell.
std::vector<double> coarsen_permeability(const Grid& fine, std::span<const double> kf)
{
    const Grid coarse = coarsen(fine);
    const auto offsets = parity_offsets(fine.dim);
    std::vector<double> kc(static_cast<std::size_t>(coarse.cells()), 0.0);
    for (const auto& off : offsets) {
        const auto map = subgrid_index_map(fine, off);
        for (std::size_t c = 0; c < kc.size(); ++c)
            kc[c] += 1.0 / kf[static_cast<std::size_t>(map[c])];
    }
    const double children = static_cast<double>(offsets.size());
    for (auto& v : kc)
        v = children / v;
    return kc;
}

/// Per-axis interpolation stencil of a fine cell: parent coarse index plus a
/// secondary neighbour with weights 3/4 and 1/4 (clamped at the boundary).
struct AxisWeights {
    std::int64_t primary;   // 1-based coarse index
    std::int64_t secondary; // 1-based coarse index, -1 if clamped away
    double w_primary;
    double w_secondary;
};

AxisWeights axis_weights(std::int64_t fi, std::int64_t mc)
{
    AxisWeights w{};
    w.primary = (fi + 1) / 2;
    const bool left_child = (fi % 2 == 1);
    const std::int64_t nb = left_child ? w.primary - 1 : w.primary + 1;
    if (nb < 1 || nb > mc) {
        w.secondary = -1;
        w.w_primary = 1.0;
        w.w_secondary = 0.0;
    } else {
        w.secondary = nb;
        w.w_primary = 0.75;
        w.w_secondary = 0.25;
    }
    return w;
}

} // namespace

struct VcyclePreconditioner::Impl {
    struct Level {
        Grid grid;
        StencilSystem A;
        // scratch for the cycle
        std::vector<double> z, r, tmp;
    };

    mutable std::vector<Level> levels; // 0 = finest; z/r/tmp are scratch
    int sweeps = 2;
    Eigen::LLT<Eigen::MatrixXd> coarse_factor;
    bool has_direct = false;

    void cycle(std::size_t l, std::span<const double> r, std::span<double> z) const;
};

VcyclePreconditioner::VcyclePreconditioner(const Grid& grid, std::span<const double> k,
                                           const BoundarySpec& bc, EdgeAverage mode,
                                           int smoother_sweeps)
    : impl_(std::make_unique<Impl>())
{
    impl_->sweeps = smoother_sweeps;
    const SourceFn zero = [](const std::array<double, 3>&) { return 0.0; };

    std::vector<double> klevel(k.begin(), k.end());
    Grid g = grid;
    while (true) {
        Impl::Level lvl;
        lvl.grid = g;
        lvl.A = assemble(g, klevel, bc, zero, mode);
        lvl.z.assign(static_cast<std::size_t>(g.cells()), 0.0);
        lvl.r.assign(static_cast<std::size_t>(g.cells()), 0.0);
        lvl.tmp.assign(static_cast<std::size_t>(g.cells()), 0.0);
        impl_->levels.push_back(std::move(lvl));
        if (g.m % 2 != 0 || g.m / 2 < 2)
            break;
        klevel = coarsen_permeability(g, klevel);
        g = coarsen(g);
    }

    if (impl_->levels.size() > 1) {
        impl_->coarse_factor.compute(to_eigen(impl_->levels.back().A));
        impl_->has_direct = impl_->coarse_factor.info() == Eigen::Success;
    }
}

VcyclePreconditioner::~VcyclePreconditioner() = default;
VcyclePreconditioner::VcyclePreconditioner(VcyclePreconditioner&&) noexcept = default;
VcyclePreconditioner& VcyclePreconditioner::operator=(VcyclePreconditioner&&) noexcept = default;

int VcyclePreconditioner::levels() const { return static_cast<int>(impl_->levels.size()); }

void VcyclePreconditioner::Impl::cycle(std::size_t l, std::span<const double> r,
                                       std::span<double> z) const
{
    Level& lvl = levels[l];
    const StencilSystem& A = lvl.A;
    const std::int64_t n = A.dof();

    if (l + 1 == levels.size()) {
        if (has_direct && levels.size() > 1) {
            Eigen::Map<const Eigen::VectorXd> rv(r.data(), n);
            Eigen::VectorXd sol = coarse_factor.solve(rv);
            std::memcpy(z.data(), sol.data(), static_cast<std::size_t>(n) * sizeof(double));
        } else {
            // single-level hierarchy: smoother-only preconditioning
            std::fill(z.begin(), z.end(), 0.0);
            sgs_smooth(A, r, z, 2 * sweeps);
        }
        return;
    }

    std::fill(z.begin(), z.end(), 0.0);
    sgs_smooth(A, r, z, sweeps);

    // residual of the correction equation
    A.apply(z, lvl.tmp);
    for (std::int64_t c = 0; c < n; ++c)
        lvl.tmp[static_cast<std::size_t>(c)] =
            r[static_cast<std::size_t>(c)] - lvl.tmp[static_cast<std::size_t>(c)];

    // restrict with the transpose of bilinear interpolation
    Level& next = levels[l + 1];
    const Grid& gf = lvl.grid;
    const Grid& gc = next.grid;
    std::fill(next.r.begin(), next.r.end(), 0.0);
    const int d = gf.dim;
    for (std::int64_t fc = 0; fc < n; ++fc) {
        const MultiIndex fi = gf.delin(fc);
        AxisWeights w[3];
        for (int a = 0; a < d; ++a)
            w[a] = axis_weights(fi[static_cast<std::size_t>(a)], gc.m);
        const double v = lvl.tmp[static_cast<std::size_t>(fc)];
        const int combos = 1 << d;
        for (int bits = 0; bits < combos; ++bits) {
            double weight = v;
            MultiIndex ci{1, 1, 1};
            bool valid = true;
            for (int a = 0; a < d; ++a) {
                const bool use_secondary = (bits >> a) & 1;
                const AxisWeights& aw = w[a];
                if (use_secondary) {
                    if (aw.secondary < 0) {
                        valid = false;
                        break;
                    }
                    weight *= aw.w_secondary;
                    ci[static_cast<std::size_t>(a)] = aw.secondary;
                } else {
                    weight *= aw.w_primary;
                    ci[static_cast<std::size_t>(a)] = aw.primary;
                }
            }
            if (valid && weight != 0.0)
                next.r[static_cast<std::size_t>(gc.lin(ci))] += weight;
        }
    }

    cycle(l + 1, next.r, next.z);

    // prolongate the coarse correction and add
    for (std::int64_t fc = 0; fc < n; ++fc) {
        const MultiIndex fi = gf.delin(fc);
        double corr = 0.0;
        AxisWeights w[3];
        for (int a = 0; a < d; ++a)
            w[a] = axis_weights(fi[static_cast<std::size_t>(a)], gc.m);
        const int combos = 1 << d;
        for (int bits = 0; bits < combos; ++bits) {
            double weight = 1.0;
            MultiIndex ci{1, 1, 1};
            bool valid = true;
            for (int a = 0; a < d; ++a) {
                const bool use_secondary = (bits >> a) & 1;
                const AxisWeights& aw = w[a];
                if (use_secondary) {
                    if (aw.secondary < 0) {
                        valid = false;
                        break;
                    }
                    weight *= aw.w_secondary;
                    ci[static_cast<std::size_t>(a)] = aw.secondary;
                } else {
                    weight *= aw.w_primary;
                    ci[static_cast<std::size_t>(a)] = aw.primary;
                }
            }
            if (valid)
                corr += weight * next.z[static_cast<std::size_t>(gc.lin(ci))];
        }
        z[static_cast<std::size_t>(fc)] += corr;
    }

    sgs_smooth(A, r, z, sweeps);
}

void VcyclePreconditioner::apply(std::span<const double> r, std::span<double> z) const
{
    impl_->cycle(0, r, z);
}

// ---------------------------------------------------------------------------
// PCG

SolveReport pcg(const StencilSystem& system, const Preconditioner& precond, double tol, int max_iter)
{
    const auto t0 = std::chrono::steady_clock::now();
    const std::int64_t n = system.dof();
    const std::size_t un = static_cast<std::size_t>(n);

    SolveReport rep;
    rep.solution.assign(un, 0.0);
    std::vector<double> r(system.rhs);
    std::vector<double> z(un, 0.0), p(un, 0.0), ap(un, 0.0);

    const double r0 = norm2(r);
    if (r0 == 0.0) {
        rep.rel_residual = 0.0;
        rep.work_units = static_cast<double>(n);
        rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return rep;
    }

    precond.apply(r, z);
    p = z;
    double rz = dot(r, z);

    for (int it = 1; it <= max_iter; ++it) {
        system.apply(p, ap);
        const double pap = dot(p, ap);
        const double alpha = rz / pap;
        for (std::size_t i = 0; i < un; ++i) {
            rep.solution[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        const double rel = norm2(r) / r0;
        rep.residual_history.push_back(rel);
        rep.iterations = it;
        if (rel <= tol) {
            rep.rel_residual = rel;
            rep.work_units = static_cast<double>(n) * (it + 1);
            rep.seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            return rep;
        }
        precond.apply(r, z);
        const double rz_new = dot(r, z);
        const double beta = rz_new / rz;
        rz = rz_new;
        for (std::size_t i = 0; i < un; ++i)
            p[i] = z[i] + beta * p[i];
    }

    throw SolverError("pcg: no convergence after " + std::to_string(max_iter) +
                          " iterations (relative residual " +
                          std::to_string(rep.residual_history.back()) + ")",
                      rep.residual_history);
}

SolveReport solve(const StencilSystem& system, std::span<const double> k, const BoundarySpec& bc,
                  EdgeAverage mode, const SolverConfig& config)
{
    VcyclePreconditioner precond(system.grid, k, bc, mode, config.smoother_sweeps);
    return pcg(system, precond, config.tol, config.max_iter);
}

std::vector<double> direct_solve(const StencilSystem& system, std::int64_t max_dof)
{
    const std::int64_t n = system.dof();
    if (n > max_dof)
        throw std::invalid_argument("direct_solve: system too large for dense fallback");
    Eigen::MatrixXd a = to_eigen(system);
    Eigen::Map<const Eigen::VectorXd> b(system.rhs.data(), n);
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success)
        throw std::runtime_error("direct_solve: Cholesky factorisation failed (matrix not SPD?)");
    Eigen::VectorXd x = llt.solve(b);
    return std::vector<double>(x.data(), x.data() + n);
}

} // namespace mlmc
