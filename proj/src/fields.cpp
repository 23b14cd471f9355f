#include "mlmc/fields.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <iostream>

namespace mlmc {

namespace {

// fftw planner functions are not thread-safe; execution with explicit arrays is
std::mutex& fftw_mutex()
{
    static std::mutex m;
    return m;
}

} // namespace

// ---------------------------------------------------------------------------
// Layers

LayerSample sample_layers(RngStream& rng)
{
    LayerSample s;
    s.y1 = rng.uniform(0.8, 0.9);
    s.y2 = rng.uniform(0.6, 0.7);
    s.y3 = rng.uniform(0.2, 0.3);
    s.y4 = rng.uniform(0.4, 0.5);
    // affine interfaces: checking the endpoints covers all x1 in [0,1]
    if (!(s.lower_at(0.0) < s.upper_at(0.0)) || !(s.lower_at(1.0) < s.upper_at(1.0)))
        throw std::logic_error("sample_layers: interfaces cross");
    return s;
}

int classify_cell(const std::array<double, 3>& x, const LayerSample& layers, int dim)
{
    if (dim == 1) {
        if (x[0] > layers.y1)
            return 1;
        if (x[0] < layers.y3)
            return 3;
        return 2;
    }
    const double upper = layers.upper_at(x[0]);
    const double lower = layers.lower_at(x[0]);
    if (x[1] > upper)
        return 1;
    if (x[1] < lower)
        return 3;
    return 2;
}

void GaussianFieldSpec::validate() const
{
    if (sigma2 < 0.0)
        throw std::invalid_argument("GaussianFieldSpec: sigma2 must be >= 0");
    if (!(lambda > 0.0))
        throw std::invalid_argument("GaussianFieldSpec: lambda must be > 0");
    if (norm_r != 1 && norm_r != 2)
        throw std::invalid_argument("GaussianFieldSpec: norm_r must be 1 or 2");
}

// ---------------------------------------------------------------------------
// Circulant embedding

std::shared_ptr<const CirculantEmbedding> CirculantEmbedding::build(const GaussianFieldSpec& spec,
                                                                    const Grid& grid)
{
    spec.validate();
    const int d = grid.dim;
    const double h = grid.h;

    for (int factor = 2; factor <= 8; factor *= 2) {
        const std::int64_t n = factor * grid.m;
        std::int64_t points = 1;
        for (int a = 0; a < d; ++a)
            points *= n;

        // covariance on the periodised lattice: first row of the circulant
        std::vector<std::complex<double>> buf(static_cast<std::size_t>(points));
        for (std::int64_t j = 0; j < points; ++j) {
            std::int64_t rem = j;
            double dist1 = 0.0, dist2 = 0.0;
            for (int a = d - 1; a >= 0; --a) {
                const std::int64_t ja = rem % n;
                rem /= n;
                const std::int64_t lag = std::min(ja, n - ja);
                dist1 += static_cast<double>(lag);
                dist2 += static_cast<double>(lag * lag);
            }
            const double dist =
                (spec.norm_r == 1) ? h * dist1 : h * std::sqrt(dist2);
            buf[static_cast<std::size_t>(j)] = spec.sigma2 * std::exp(-dist / spec.lambda);
        }

        std::vector<int> dims(static_cast<std::size_t>(d), static_cast<int>(n));
        fftw_plan forward = nullptr;
        {
            std::lock_guard<std::mutex> lock(fftw_mutex());
            forward = fftw_plan_dft(d, dims.data(), reinterpret_cast<fftw_complex*>(buf.data()),
                                    reinterpret_cast<fftw_complex*>(buf.data()), FFTW_FORWARD,
                                    FFTW_ESTIMATE | FFTW_UNALIGNED);
        }
        fftw_execute(forward);
        {
            std::lock_guard<std::mutex> lock(fftw_mutex());
            fftw_destroy_plan(forward);
        }

        double max_eig = 0.0, min_eig = 0.0, max_imag = 0.0;
        for (const auto& v : buf) {
            max_eig = std::max(max_eig, v.real());
            min_eig = std::min(min_eig, v.real());
            max_imag = std::max(max_imag, std::abs(v.imag()));
        }
        if (max_eig > 0.0 && max_imag > 1e-10 * max_eig)
            throw EmbeddingError("circulant embedding: spectrum not real (fft error?)");

        if (min_eig < -1e-8 * max_eig) {
            if (factor < 8)
                continue; // pad more and retry
            throw EmbeddingError("embedding not non-negative definite; increase padding");
        }

        auto emb = std::shared_ptr<CirculantEmbedding>(new CirculantEmbedding());
        emb->spec_ = spec;
        emb->grid_ = grid;
        emb->factor_ = factor;
        emb->ext_n_ = n;
        emb->ext_points_ = points;
        emb->eigenvalues_.resize(static_cast<std::size_t>(points));
        emb->sqrt_eigenvalues_.resize(static_cast<std::size_t>(points));
        bool clipped = false;
        for (std::size_t j = 0; j < buf.size(); ++j) {
            double ev = buf[j].real();
            if (ev < 0.0) {
                ev = 0.0;
                clipped = true;
            }
            emb->eigenvalues_[j] = ev;
            emb->sqrt_eigenvalues_[j] = std::sqrt(ev);
        }
        if (clipped)
            std::cerr << "[mlmc] warning: circulant embedding clipped eigenvalues in [-1e-8*max, 0)"
                         " to zero (m=" << grid.m << ", factor=" << factor << ")\n";

        {
            std::lock_guard<std::mutex> lock(fftw_mutex());
            emb->plan_ = fftw_plan_dft(d, dims.data(), reinterpret_cast<fftw_complex*>(buf.data()),
                                       reinterpret_cast<fftw_complex*>(buf.data()), FFTW_BACKWARD,
                                       FFTW_ESTIMATE | FFTW_UNALIGNED);
        }
        return emb;
    }
    throw EmbeddingError("embedding not non-negative definite; increase padding");
}

CirculantEmbedding::~CirculantEmbedding()
{
    if (plan_ != nullptr) {
        std::lock_guard<std::mutex> lock(fftw_mutex());
        fftw_destroy_plan(static_cast<fftw_plan>(plan_));
    }
}

void CirculantEmbedding::sample_pair(RngStream& rng, std::vector<double>& field_a,
                                     std::vector<double>& field_b) const
{
    const std::size_t points = static_cast<std::size_t>(ext_points_);
    std::vector<std::complex<double>> buf(points);
    for (std::size_t j = 0; j < points; ++j) {
        const double a = rng.normal();
        const double b = rng.normal();
        buf[j] = sqrt_eigenvalues_[j] * std::complex<double>(a, b);
    }
    fftw_execute_dft(static_cast<fftw_plan>(plan_), reinterpret_cast<fftw_complex*>(buf.data()),
                     reinterpret_cast<fftw_complex*>(buf.data()));

    const double scale = 1.0 / std::sqrt(static_cast<double>(ext_points_));
    const std::int64_t cells = grid_.cells();
    field_a.resize(static_cast<std::size_t>(cells));
    field_b.resize(static_cast<std::size_t>(cells));
    const int d = grid_.dim;
    for (std::int64_t c = 0; c < cells; ++c) {
        // cell coordinates (0-based, last fastest) -> extended lattice index
        std::int64_t rem = c, ext = 0, mul = 1;
        for (int a = d - 1; a >= 0; --a) {
            ext += (rem % grid_.m) * mul;
            rem /= grid_.m;
            mul *= ext_n_;
        }
        field_a[static_cast<std::size_t>(c)] = buf[static_cast<std::size_t>(ext)].real() * scale;
        field_b[static_cast<std::size_t>(c)] = buf[static_cast<std::size_t>(ext)].imag() * scale;
    }
}

double CirculantEmbedding::fft_work() const
{
    const double m = static_cast<double>(ext_points_);
    return m * std::log2(std::max(2.0, m));
}

std::pair<std::vector<double>, std::vector<double>>
sample_gaussian_field(const CirculantEmbedding& embedding, RngStream& rng)
{
    std::vector<double> a, b;
    embedding.sample_pair(rng, a, b);
    const double mu = embedding.spec().mu;
    for (auto& v : a)
        v += mu;
    for (auto& v : b)
        v += mu;
    return {std::move(a), std::move(b)};
}

// ---------------------------------------------------------------------------
// Subsample extraction

namespace {

PermeabilitySample extract_values(const PermeabilitySample& fine, const std::array<int, 3>& offset)
{
    const auto map = subgrid_index_map(fine.grid, offset);
    PermeabilitySample coarse;
    coarse.grid = coarsen(fine.grid);
    coarse.level = fine.level - 1;
    coarse.provenance = fine.provenance;
    coarse.values.resize(map.size());
    for (std::size_t c = 0; c < map.size(); ++c)
        coarse.values[c] = fine.values[static_cast<std::size_t>(map[c])];
    return coarse;
}

} // namespace

PermeabilitySample extract_coarse_subsample(const PermeabilitySample& fine,
                                            const std::array<int, 3>& offset)
{
    if (fine.provenance != FieldProvenance::Stationary)
        throw std::invalid_argument("CGV requires stationary permeability");
    return extract_values(fine, offset);
}

// ---------------------------------------------------------------------------
// Piecewise constant model

PiecewiseConstantModel::Draw PiecewiseConstantModel::draw(RngStream& rng) const
{
    Draw d;
    d.layers = sample_layers(rng);
    for (int i = 0; i < 3; ++i)
        d.z[static_cast<std::size_t>(i)] =
            rng.normal(specs_[static_cast<std::size_t>(i)].mu,
                       std::sqrt(specs_[static_cast<std::size_t>(i)].sigma2));
    return d;
}

PermeabilitySample PiecewiseConstantModel::evaluate(const Grid& grid, const Draw& d) const
{
    PermeabilitySample s;
    s.grid = grid;
    s.provenance = FieldProvenance::Piecewise;
    s.values.resize(static_cast<std::size_t>(grid.cells()));
    std::array<double, 3> k{};
    for (int i = 0; i < 3; ++i)
        k[static_cast<std::size_t>(i)] = std::exp(d.z[static_cast<std::size_t>(i)]);
    for (std::int64_t c = 0; c < grid.cells(); ++c) {
        const int layer = classify_cell(grid.centre(grid.delin(c)), d.layers, grid.dim);
        s.values[static_cast<std::size_t>(c)] = k[static_cast<std::size_t>(layer - 1)];
    }
    return s;
}

PermeabilitySample PiecewiseConstantModel::sample(const Grid& grid, RngStream& rng) const
{
    return evaluate(grid, draw(rng));
}

CoupledSample PiecewiseConstantModel::sample_coupled(const Grid& fine, const Grid& coarse,
                                                     RngStream& rng) const
{
    const Draw d = draw(rng);
    return {evaluate(fine, d), evaluate(coarse, d)};
}

std::vector<PermeabilitySample> PiecewiseConstantModel::sample_chain(const std::vector<Grid>& grids,
                                                                     RngStream& rng) const
{
    const Draw d = draw(rng);
    std::vector<PermeabilitySample> out;
    out.reserve(grids.size());
    for (const auto& g : grids)
        out.push_back(evaluate(g, d));
    return out;
}

double PiecewiseConstantModel::sample_work(const Grid& grid) const
{
    return static_cast<double>(grid.cells());
}

// ---------------------------------------------------------------------------
// Log-normal field model

LognormalFieldModel::LognormalFieldModel(GaussianFieldSpec spec) : spec_(spec)
{
    spec_.validate();
}

std::shared_ptr<const CirculantEmbedding> LognormalFieldModel::embedding(const Grid& grid) const
{
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = embeddings_.find(grid.m);
    if (it != embeddings_.end())
        return it->second;
    auto emb = CirculantEmbedding::build(spec_, grid);
    embeddings_.emplace(grid.m, emb);
    return emb;
}

void LognormalFieldModel::prepare(const std::vector<Grid>& grids) const
{
    for (const auto& g : grids)
        embedding(g);
}

PermeabilitySample LognormalFieldModel::sample(const Grid& grid, RngStream& rng) const
{
    auto emb = embedding(grid);
    std::vector<double> a, b;
    emb->sample_pair(rng, a, b);
    PermeabilitySample s;
    s.grid = grid;
    s.provenance = FieldProvenance::Stationary;
    s.values.resize(a.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        s.values[i] = std::exp(spec_.mu + a[i]);
    return s;
}

CoupledSample LognormalFieldModel::sample_coupled(const Grid& fine, const Grid& coarse,
                                                  RngStream& rng) const
{
    if (coarse.m * 2 != fine.m)
        throw std::invalid_argument("sample_coupled: coarse grid must be the factor-2 coarsening");

    // one field on the half-spacing lattice carries both levels: fine centre
    // i sits at lattice point 2i-1, coarse centre j at lattice point 4j-2
    // (1-based), reproducing the exact relative geometry of the two grids
    const Grid lattice(fine.dim, 2 * fine.m);
    auto emb = embedding(lattice);
    std::vector<double> a, b;
    emb->sample_pair(rng, a, b);

    CoupledSample cs;
    cs.fine.grid = fine;
    cs.fine.provenance = FieldProvenance::Stationary;
    cs.fine.values.resize(static_cast<std::size_t>(fine.cells()));
    for (std::int64_t c = 0; c < fine.cells(); ++c) {
        MultiIndex idx = fine.delin(c);
        MultiIndex li{1, 1, 1};
        for (int ax = 0; ax < fine.dim; ++ax)
            li[static_cast<std::size_t>(ax)] = 2 * idx[static_cast<std::size_t>(ax)] - 1;
        cs.fine.values[static_cast<std::size_t>(c)] =
            std::exp(spec_.mu + a[static_cast<std::size_t>(lattice.lin(li))]);
    }
    cs.coarse.grid = coarse;
    cs.coarse.provenance = FieldProvenance::Stationary;
    cs.coarse.values.resize(static_cast<std::size_t>(coarse.cells()));
    for (std::int64_t c = 0; c < coarse.cells(); ++c) {
        MultiIndex idx = coarse.delin(c);
        MultiIndex li{1, 1, 1};
        for (int ax = 0; ax < coarse.dim; ++ax)
            li[static_cast<std::size_t>(ax)] = 4 * idx[static_cast<std::size_t>(ax)] - 2;
        cs.coarse.values[static_cast<std::size_t>(c)] =
            std::exp(spec_.mu + a[static_cast<std::size_t>(lattice.lin(li))]);
    }
    return cs;
}

std::vector<PermeabilitySample> LognormalFieldModel::sample_chain(const std::vector<Grid>& grids,
                                                                  RngStream& rng) const
{
    std::vector<PermeabilitySample> out;
    out.reserve(grids.size());
    out.push_back(sample(grids.front(), rng));
    for (std::size_t i = 1; i < grids.size(); ++i) {
        if (grids[i].m * 2 != grids[i - 1].m)
            throw std::invalid_argument("sample_chain: grids must coarsen by factor 2");
        out.push_back(extract_coarse_subsample(out[i - 1], {0, 0, 0}));
    }
    return out;
}

double LognormalFieldModel::sample_work(const Grid& grid) const
{
    return embedding(grid)->fft_work() + static_cast<double>(grid.cells());
}

double LognormalFieldModel::coupled_sample_work(const Grid& fine, const Grid& coarse) const
{
    const Grid lattice(fine.dim, 2 * fine.m);
    return embedding(lattice)->fft_work() + static_cast<double>(fine.cells()) +
           static_cast<double>(coarse.cells());
}

// ---------------------------------------------------------------------------
// Piecewise correlated model

PiecewiseCorrelatedModel::PiecewiseCorrelatedModel(std::array<GaussianFieldSpec, 3> layer_specs)
    : specs_(layer_specs)
{
    for (const auto& s : specs_)
        s.validate();
}

std::shared_ptr<const CirculantEmbedding> PiecewiseCorrelatedModel::embedding(int layer,
                                                                              const Grid& grid) const
{
    // share the embedding of an earlier layer with identical parameters
    int key_layer = layer;
    for (int j = 0; j < layer; ++j) {
        if (specs_[static_cast<std::size_t>(j)] == specs_[static_cast<std::size_t>(layer)]) {
            key_layer = j;
            break;
        }
    }
    std::lock_guard<std::mutex> lock(mutex_);
    const auto key = std::make_pair(key_layer, grid.m);
    auto it = embeddings_.find(key);
    if (it != embeddings_.end())
        return it->second;
    auto emb = CirculantEmbedding::build(specs_[static_cast<std::size_t>(key_layer)], grid);
    embeddings_.emplace(key, emb);
    return emb;
}

void PiecewiseCorrelatedModel::prepare(const std::vector<Grid>& grids) const
{
    for (const auto& g : grids)
        for (int i = 0; i < 3; ++i)
            embedding(i, g);
}

std::array<std::vector<double>, 3> PiecewiseCorrelatedModel::layer_fields(const Grid& grid,
                                                                          RngStream& rng) const
{
    std::array<std::vector<double>, 3> fields;
    // both fields of each FFT are consumed in order, buffered per embedding
    std::map<const CirculantEmbedding*, std::vector<double>> pending;
    for (int i = 0; i < 3; ++i) {
        auto emb = embedding(i, grid);
        auto it = pending.find(emb.get());
        if (it != pending.end()) {
            fields[static_cast<std::size_t>(i)] = std::move(it->second);
            pending.erase(it);
        } else {
            std::vector<double> a, b;
            emb->sample_pair(rng, a, b);
            fields[static_cast<std::size_t>(i)] = std::move(a);
            pending.emplace(emb.get(), std::move(b));
        }
    }
    return fields;
}

PermeabilitySample PiecewiseCorrelatedModel::sample(const Grid& grid, RngStream& rng) const
{
    const LayerSample layers = sample_layers(rng);
    const auto fields = layer_fields(grid, rng);
    PermeabilitySample s;
    s.grid = grid;
    s.provenance = FieldProvenance::Piecewise;
    s.values.resize(static_cast<std::size_t>(grid.cells()));
    for (std::int64_t c = 0; c < grid.cells(); ++c) {
        const int layer = classify_cell(grid.centre(grid.delin(c)), layers, grid.dim);
        const auto& spec = specs_[static_cast<std::size_t>(layer - 1)];
        s.values[static_cast<std::size_t>(c)] =
            std::exp(spec.mu + fields[static_cast<std::size_t>(layer - 1)][static_cast<std::size_t>(c)]);
    }
    return s;
}

CoupledSample PiecewiseCorrelatedModel::sample_coupled(const Grid& fine, const Grid& coarse,
                                                       RngStream& rng) const
{
    if (coarse.m * 2 != fine.m)
        throw std::invalid_argument("sample_coupled: coarse grid must be the factor-2 coarsening");
    CoupledSample cs;
    cs.fine = sample(fine, rng);
    // fixed rule: coarse value = fine value at the parity-(0,...,0) child cell
    cs.coarse = extract_values(cs.fine, {0, 0, 0});
    return cs;
}

std::vector<PermeabilitySample> PiecewiseCorrelatedModel::sample_chain(
    const std::vector<Grid>& grids, RngStream& rng) const
{
    const LayerSample layers = sample_layers(rng);
    auto fields = layer_fields(grids.front(), rng);

    std::vector<PermeabilitySample> out;
    out.reserve(grids.size());
    for (std::size_t gi = 0; gi < grids.size(); ++gi) {
        const Grid& g = grids[gi];
        if (gi > 0) {
            if (g.m * 2 != grids[gi - 1].m)
                throw std::invalid_argument("sample_chain: grids must coarsen by factor 2");
            // restrict each layer field to the parity-0 subgrid of the previous level
            const auto map = subgrid_index_map(grids[gi - 1], {0, 0, 0});
            for (auto& f : fields) {
                std::vector<double> coarse(map.size());
                for (std::size_t c = 0; c < map.size(); ++c)
                    coarse[c] = f[static_cast<std::size_t>(map[c])];
                f = std::move(coarse);
            }
        }
        PermeabilitySample s;
        s.grid = g;
        s.provenance = FieldProvenance::Piecewise;
        s.values.resize(static_cast<std::size_t>(g.cells()));
        for (std::int64_t c = 0; c < g.cells(); ++c) {
            const int layer = classify_cell(g.centre(g.delin(c)), layers, g.dim);
            const auto& spec = specs_[static_cast<std::size_t>(layer - 1)];
            s.values[static_cast<std::size_t>(c)] = std::exp(
                spec.mu + fields[static_cast<std::size_t>(layer - 1)][static_cast<std::size_t>(c)]);
        }
        out.push_back(std::move(s));
    }
    return out;
}

double PiecewiseCorrelatedModel::sample_work(const Grid& grid) const
{
    // replay the FIFO pairing to count transforms
    double work = static_cast<double>(grid.cells());
    std::array<bool, 3> pending{false, false, false};
    for (int i = 0; i < 3; ++i) {
        int key = i;
        for (int j = 0; j < i; ++j)
            if (specs_[static_cast<std::size_t>(j)] == specs_[static_cast<std::size_t>(i)]) {
                key = j;
                break;
            }
        if (pending[static_cast<std::size_t>(key)]) {
            pending[static_cast<std::size_t>(key)] = false;
        } else {
            work += embedding(key, grid)->fft_work();
            pending[static_cast<std::size_t>(key)] = true;
        }
    }
    return work;
}

void write_field_binary(const PermeabilitySample& sample, const std::string& path)
{
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw std::runtime_error("write_field_binary: cannot open " + path);
    os.write(reinterpret_cast<const char*>(sample.values.data()),
             static_cast<std::streamsize>(sample.values.size() * sizeof(double)));
}

} // namespace mlmc
