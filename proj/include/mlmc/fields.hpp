#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mlmc/grid.hpp"
#include "mlmc/rng.hpp"

namespace mlmc {

// ---------------------------------------------------------------------------
// Random layer geometry

/// Interface ordinates of the randomly layered medium. The upper interface is
/// the line through (0,y1),(1,y2), the lower one through (0,y3),(1,y4).
struct LayerSample {
    double y1 = 0.85, y2 = 0.65, y3 = 0.25, y4 = 0.45;

    double upper_at(double x1) const { return y1 + (y2 - y1) * x1; }
    double lower_at(double x1) const { return y3 + (y4 - y3) * x1; }
};

/// Draw y1 ~ U(0.8,0.9), y2 ~ U(0.6,0.7), y3 ~ U(0.2,0.3), y4 ~ U(0.4,0.5).
LayerSample sample_layers(RngStream& rng);

/// Layer of a point: 1 above the upper interface, 3 below the lower one,
/// 2 in between. In 3D the third coordinate is ignored (layers are extruded
/// along x3); in 1D x1 is compared against y1 and y3 directly.
int classify_cell(const std::array<double, 3>& x, const LayerSample& layers, int dim);

// ---------------------------------------------------------------------------
// Field specifications

/// Stationary Gaussian field with exponential covariance
/// sigma2 * exp(-|x-y|_r / lambda), r in {1,2}.
struct GaussianFieldSpec {
    double mu = 0.0;
    double sigma2 = 1.0;
    double lambda = 0.3;
    int norm_r = 2;

    void validate() const;
    bool operator==(const GaussianFieldSpec&) const = default;
};

/// Log-permeability N(mu, sigma2) for one layer of the piecewise constant model.
struct NormalSpec {
    double mu = 0.0;
    double sigma2 = 1.0;
};

enum class FieldProvenance { Stationary, Piecewise };

/// Per-cell permeability values at the cell centres of one grid level.
struct PermeabilitySample {
    Grid grid;
    int level = 0;
    FieldProvenance provenance = FieldProvenance::Stationary;
    std::vector<double> values;
};

// ---------------------------------------------------------------------------
// Circulant embedding

class EmbeddingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Periodic embedding of the exponential covariance on the cell-centre
/// lattice of a grid. Eigenvalues are the d-dimensional DFT of the covariance
/// on the extended lattice; sampling scales complex white noise by their
/// square roots and applies an inverse FFT, yielding two independent fields
/// per transform. Immutable and shareable across threads after construction.
class CirculantEmbedding {
public:
    /// Builds with extension factor 2 per direction, doubling up to 8 while
    /// the spectrum has eigenvalues below -1e-8 * max; throws EmbeddingError
    /// if even factor 8 fails. Small negatives are clipped to zero.
    static std::shared_ptr<const CirculantEmbedding> build(const GaussianFieldSpec& spec,
                                                           const Grid& grid);

    ~CirculantEmbedding();
    CirculantEmbedding(const CirculantEmbedding&) = delete;
    CirculantEmbedding& operator=(const CirculantEmbedding&) = delete;

    const GaussianFieldSpec& spec() const { return spec_; }
    const Grid& grid() const { return grid_; }
    int extension_factor() const { return factor_; }
    std::int64_t extended_points() const { return ext_points_; }
    const std::vector<double>& eigenvalues() const { return eigenvalues_; }

    /// Draw two independent zero-mean fields on the grid's cell-centre
    /// lattice (the spec mean is NOT added here).
    void sample_pair(RngStream& rng, std::vector<double>& field_a,
                     std::vector<double>& field_b) const;

    /// Work units of one sampling FFT: extended points * log2(extended points).
    double fft_work() const;

private:
    CirculantEmbedding() = default;

    GaussianFieldSpec spec_;
    Grid grid_;
    int factor_ = 2;
    std::int64_t ext_n_ = 0;       // extended lattice size per direction
    std::int64_t ext_points_ = 0;  // ext_n_^dim
    std::vector<double> eigenvalues_;
    std::vector<double> sqrt_eigenvalues_;
    void* plan_ = nullptr; // fftw_plan for the sampling transform
};

/// Two independent realisations (mean included) at the cell centres.
/// Convenience wrapper over CirculantEmbedding::sample_pair.
std::pair<std::vector<double>, std::vector<double>>
sample_gaussian_field(const CirculantEmbedding& embedding, RngStream& rng);

// ---------------------------------------------------------------------------
// Permeability models

/// CGV subsample: coarse values are the fine values on the parity subgrid.
/// Only valid for stationary fields; piecewise provenance is rejected.
PermeabilitySample extract_coarse_subsample(const PermeabilitySample& fine,
                                            const std::array<int, 3>& offset);

struct CoupledSample {
    PermeabilitySample fine;
    PermeabilitySample coarse;
};

/// A random permeability model that can be sampled per level, in coupled
/// fine/coarse pairs sharing one random sample, and in whole chains for
/// reference-grid error studies. Samplers are pure functions of the rng
/// stream; models are safe to share across threads after prepare().
class PermeabilityModel {
public:
    virtual ~PermeabilityModel() = default;

    virtual FieldProvenance provenance() const = 0;
    bool stationary() const { return provenance() == FieldProvenance::Stationary; }

    virtual PermeabilitySample sample(const Grid& grid, RngStream& rng) const = 0;

    /// Fine sample plus the coarse sample derived from the same randomness.
    /// Requires coarse = coarsen(fine) (refinement factor 2).
    virtual CoupledSample sample_coupled(const Grid& fine, const Grid& coarse,
                                         RngStream& rng) const = 0;

    /// One sample evaluated on every grid of `grids` (ordered fine to coarse,
    /// each consecutive pair differing by factor 2), all sharing the same
    /// underlying randomness with exact per-level marginals.
    virtual std::vector<PermeabilitySample> sample_chain(const std::vector<Grid>& grids,
                                                         RngStream& rng) const = 0;

    /// Deterministic work-unit model of one sample() call.
    virtual double sample_work(const Grid& grid) const = 0;

    /// Work-unit model of one sample_coupled() call.
    virtual double coupled_sample_work(const Grid& fine, const Grid& coarse) const
    {
        return sample_work(fine) + static_cast<double>(coarse.cells());
    }

    virtual std::string describe() const = 0;

    /// Pre-build any embeddings for the given grids (cheap to call twice).
    virtual void prepare(const std::vector<Grid>&) const {}
};

/// Example-1 model: three random layers, one log-normal constant per layer.
class PiecewiseConstantModel final : public PermeabilityModel {
public:
    explicit PiecewiseConstantModel(std::array<NormalSpec, 3> layer_specs)
        : specs_(layer_specs)
    {
    }

    FieldProvenance provenance() const override { return FieldProvenance::Piecewise; }
    PermeabilitySample sample(const Grid&, RngStream&) const override;
    CoupledSample sample_coupled(const Grid&, const Grid&, RngStream&) const override;
    std::vector<PermeabilitySample> sample_chain(const std::vector<Grid>&,
                                                 RngStream&) const override;
    double sample_work(const Grid& grid) const override;
    std::string describe() const override { return "piecewise_constant"; }

    const std::array<NormalSpec, 3>& layer_specs() const { return specs_; }

private:
    struct Draw {
        LayerSample layers;
        std::array<double, 3> z;
    };
    Draw draw(RngStream&) const;
    PermeabilitySample evaluate(const Grid&, const Draw&) const;

    std::array<NormalSpec, 3> specs_;
};

/// Single stationary log-normal field exp(g), g Gaussian with exponential
/// covariance. The only model eligible for Coarse Grid Variates.
class LognormalFieldModel final : public PermeabilityModel {
public:
    explicit LognormalFieldModel(GaussianFieldSpec spec);

    FieldProvenance provenance() const override { return FieldProvenance::Stationary; }
    PermeabilitySample sample(const Grid&, RngStream&) const override;

    /// Same-sample fine/coarse pair: one field drawn on the half-spacing
    /// lattice supplies the fine cell centres (every 2nd point) and the
    /// coarse cell centres (every 4th point, offset by one) so both levels
    /// see their own cell-centre positions with the exact joint law.
    CoupledSample sample_coupled(const Grid&, const Grid&, RngStream&) const override;
    std::vector<PermeabilitySample> sample_chain(const std::vector<Grid>&,
                                                 RngStream&) const override;
    double sample_work(const Grid& grid) const override;
    double coupled_sample_work(const Grid& fine, const Grid& coarse) const override;
    std::string describe() const override { return "lognormal"; }
    void prepare(const std::vector<Grid>& grids) const override;

    const GaussianFieldSpec& spec() const { return spec_; }
    std::shared_ptr<const CirculantEmbedding> embedding(const Grid&) const;

private:
    GaussianFieldSpec spec_;
    mutable std::mutex mutex_;
    mutable std::map<std::int64_t, std::shared_ptr<const CirculantEmbedding>> embeddings_;
};

/// Example-2 model: three random layers, each carrying an independent
/// stationary log-normal field with its own parameters.
class PiecewiseCorrelatedModel final : public PermeabilityModel {
public:
    explicit PiecewiseCorrelatedModel(std::array<GaussianFieldSpec, 3> layer_specs);

    FieldProvenance provenance() const override { return FieldProvenance::Piecewise; }
    PermeabilitySample sample(const Grid&, RngStream&) const override;
    CoupledSample sample_coupled(const Grid&, const Grid&, RngStream&) const override;
    std::vector<PermeabilitySample> sample_chain(const std::vector<Grid>&,
                                                 RngStream&) const override;
    double sample_work(const Grid& grid) const override;
    std::string describe() const override { return "piecewise_correlated"; }
    void prepare(const std::vector<Grid>& grids) const override;

    const std::array<GaussianFieldSpec, 3>& layer_specs() const { return specs_; }

private:
    /// Zero-mean layer fields for one realisation, cell-centre lattice.
    std::array<std::vector<double>, 3> layer_fields(const Grid&, RngStream&) const;
    std::shared_ptr<const CirculantEmbedding> embedding(int layer, const Grid&) const;

    std::array<GaussianFieldSpec, 3> specs_;
    mutable std::mutex mutex_;
    mutable std::map<std::pair<int, std::int64_t>, std::shared_ptr<const CirculantEmbedding>>
        embeddings_;
};

/// Dump field values as raw doubles, row-major with the last coordinate
/// fastest (the linearised grid order).
void write_field_binary(const PermeabilitySample& sample, const std::string& path);

} // namespace mlmc
