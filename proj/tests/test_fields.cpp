#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "mlmc/fields.hpp"
#include "mlmc/grid.hpp"
#include "mlmc/rng.hpp"

using namespace mlmc;

namespace {

struct Stats {
    double mean = 0.0;
    double se = 0.0; // standard error of the mean
};

Stats stats_of(const std::vector<double>& xs)
{
    const double n = static_cast<double>(xs.size());
    Stats s;
    s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : xs)
        ss += (x - s.mean) * (x - s.mean);
    s.se = std::sqrt(ss / (n - 1.0) / n);
    return s;
}

/// Per-sample spatial average of (g(x)-mu)(g(x+lag e_axis)-mu) over all pairs.
double lag_product(const std::vector<double>& field, const Grid& g, int axis, std::int64_t lag,
                   double mu)
{
    double sum = 0.0;
    std::int64_t count = 0;
    for (std::int64_t c = 0; c < g.cells(); ++c) {
        const auto idx = g.delin(c);
        if (idx[static_cast<std::size_t>(axis)] + lag > g.m)
            continue;
        auto jdx = idx;
        jdx[static_cast<std::size_t>(axis)] += lag;
        sum += (field[static_cast<std::size_t>(c)] - mu) *
               (field[static_cast<std::size_t>(g.lin(jdx))] - mu);
        ++count;
    }
    return sum / static_cast<double>(count);
}

/// Two-sample Kolmogorov-Smirnov statistic.
double ks_statistic(std::vector<double> a, std::vector<double> b)
{
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double d = 0.0;
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] <= b[j])
            ++i;
        else
            ++j;
        const double fa = static_cast<double>(i) / static_cast<double>(a.size());
        const double fb = static_cast<double>(j) / static_cast<double>(b.size());
        d = std::max(d, std::abs(fa - fb));
    }
    return d;
}

} // namespace

// ---------------------------------------------------------------------------
// Layers

TEST_CASE("layer sample ranges and midpoints")
{
    // force the uniforms to interval midpoints by averaging many draws
    RngStream rng(1);
    std::vector<double> y1s, y2s, y3s, y4s;
    for (int i = 0; i < 10000; ++i) {
        const auto s = sample_layers(rng);
        CHECK(s.y1 >= 0.8);
        CHECK(s.y1 <= 0.9);
        CHECK(s.y2 >= 0.6);
        CHECK(s.y2 <= 0.7);
        CHECK(s.y3 >= 0.2);
        CHECK(s.y3 <= 0.3);
        CHECK(s.y4 >= 0.4);
        CHECK(s.y4 <= 0.5);
        y1s.push_back(s.y1);
        y2s.push_back(s.y2);
        y3s.push_back(s.y3);
        y4s.push_back(s.y4);
    }
    const auto s1 = stats_of(y1s);
    CHECK(std::abs(s1.mean - 0.85) <= 3.0 * s1.se);
    const auto s3 = stats_of(y3s);
    CHECK(std::abs(s3.mean - 0.25) <= 3.0 * s3.se);
}

TEST_CASE("cell classification against the interface lines")
{
    const LayerSample mid{0.85, 0.65, 0.25, 0.45};
    CHECK(classify_cell({0.5, 0.95, 0.0}, mid, 2) == 1); // upper line at 0.75
    CHECK(classify_cell({0.5, 0.05, 0.0}, mid, 2) == 3); // lower line at 0.35
    CHECK(classify_cell({0.5, 0.5, 0.9}, mid, 3) == 2);  // x3 ignored
    // 1d rule compares x1 against y1 and y3
    CHECK(classify_cell({0.95, 0.0, 0.0}, mid, 1) == 1);
    CHECK(classify_cell({0.1, 0.0, 0.0}, mid, 1) == 3);
    CHECK(classify_cell({0.5, 0.0, 0.0}, mid, 1) == 2);
}

// ---------------------------------------------------------------------------
// Piecewise constant model

TEST_CASE("degenerate piecewise constant fields")
{
    const Grid g(2, 8);
    RngStream rng(2);

    std::array<NormalSpec, 3> unit{};
    for (auto& s : unit)
        s.sigma2 = 0.0;
    PiecewiseConstantModel m1(unit);
    const auto s1 = m1.sample(g, rng);
    for (double v : s1.values)
        CHECK(v == doctest::Approx(1.0));

    std::array<NormalSpec, 3> mid{};
    mid[1].mu = std::log(4.0);
    for (auto& s : mid)
        s.sigma2 = 0.0;
    PiecewiseConstantModel m2(mid);
    const auto s2 = m2.sample(g, rng);
    for (std::int64_t c = 0; c < g.cells(); ++c) {
        const double v = s2.values[static_cast<std::size_t>(c)];
        CHECK((v == doctest::Approx(1.0) || v == doctest::Approx(4.0)));
    }
    // middle cell is layer 2
    CHECK(s2.values[static_cast<std::size_t>(g.lin({4, 4, 1}))] == doctest::Approx(4.0));
}

TEST_CASE("piecewise constant: value within each layer is constant per realisation")
{
    const Grid g(2, 16);
    std::array<NormalSpec, 3> specs{};
    PiecewiseConstantModel model(specs);
    RngStream rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        const auto s = model.sample(g, rng);
        std::vector<double> distinct;
        for (double v : s.values) {
            CHECK(v > 0.0);
            bool found = false;
            for (double d : distinct)
                if (d == v)
                    found = true;
            if (!found)
                distinct.push_back(v);
        }
        CHECK(distinct.size() <= 3);
    }
}

TEST_CASE("piecewise constant: lognormal layer mean")
{
    // E[exp(z)] = exp(1/2) for standard normal z; check the layer-1 value
    const Grid g(2, 4);
    std::array<NormalSpec, 3> specs{};
    PiecewiseConstantModel model(specs);
    RngStream rng(4);
    std::vector<double> tops;
    for (int i = 0; i < 10000; ++i) {
        const auto s = model.sample(g, rng);
        tops.push_back(s.values[static_cast<std::size_t>(g.lin({1, 4, 1}))]);
        // cell (1,4) has centre (0.125, 0.875): above the upper line always
    }
    const auto st = stats_of(tops);
    CHECK(std::abs(st.mean - std::exp(0.5)) <= 3.0 * st.se);
}

// ---------------------------------------------------------------------------
// Circulant embedding

TEST_CASE("1d m=2 embedding matches the hand-computed 4-point dft")
{
    GaussianFieldSpec spec;
    spec.sigma2 = 1.0;
    spec.lambda = 0.3;
    spec.norm_r = 1;
    const Grid g(1, 2);
    const auto emb = CirculantEmbedding::build(spec, g);
    REQUIRE(emb->extension_factor() == 2);
    REQUIRE(emb->eigenvalues().size() == 4);
    // dft of (1, e^{-5/3}, e^{-10/3}, e^{-5/3})
    CHECK(emb->eigenvalues()[0] == doctest::Approx(1.413425199022984).epsilon(1e-12));
    CHECK(emb->eigenvalues()[1] == doctest::Approx(0.964326006652748).epsilon(1e-12));
    CHECK(emb->eigenvalues()[2] == doctest::Approx(0.657922787671520).epsilon(1e-12));
    CHECK(emb->eigenvalues()[3] == doctest::Approx(0.964326006652748).epsilon(1e-12));
}

TEST_CASE("1-norm exponential embeddings are valid at minimal padding")
{
    for (std::int64_t m : {8, 16, 32}) {
        for (double lambda : {0.1, 0.3, 1.0}) {
            GaussianFieldSpec spec;
            spec.sigma2 = 1.0;
            spec.lambda = lambda;
            spec.norm_r = 1;
            const Grid g(2, m);
            const auto emb = CirculantEmbedding::build(spec, g);
            CHECK(emb->extension_factor() == 2);
            for (double ev : emb->eigenvalues())
                CHECK(ev >= 0.0);
        }
    }
}

TEST_CASE("sigma2 = 0 embeds to an all-zero spectrum and constant fields")
{
    GaussianFieldSpec spec;
    spec.sigma2 = 0.0;
    spec.mu = 1.5;
    const Grid g(2, 8);
    const auto emb = CirculantEmbedding::build(spec, g);
    for (double ev : emb->eigenvalues())
        CHECK(ev == 0.0);
    RngStream rng(5);
    const auto [a, b] = sample_gaussian_field(*emb, rng);
    for (double v : a)
        CHECK(v == doctest::Approx(1.5));
    for (double v : b)
        CHECK(v == doctest::Approx(1.5));
}

TEST_CASE("sampled fields reproduce mean, variance and covariance at small lags")
{
    GaussianFieldSpec spec;
    spec.mu = -0.5;
    spec.sigma2 = 1.0;
    spec.lambda = 0.3;
    spec.norm_r = 1;
    const Grid g(2, 16);
    const auto emb = CirculantEmbedding::build(spec, g);

    RngStream rng(6);
    const int n = 5000; // two fields per draw -> 10^4 fields
    std::vector<double> means;
    std::vector<std::vector<double>> lagprods(3); // lags h, 2h, 4h
    std::vector<double> vars;
    for (int i = 0; i < n; ++i) {
        const auto [a, b] = sample_gaussian_field(*emb, rng);
        for (const auto& f : {a, b}) {
            means.push_back(std::accumulate(f.begin(), f.end(), 0.0) /
                            static_cast<double>(f.size()));
            vars.push_back(lag_product(f, g, 0, 0, spec.mu));
            lagprods[0].push_back(lag_product(f, g, 0, 1, spec.mu));
            lagprods[1].push_back(lag_product(f, g, 0, 2, spec.mu));
            lagprods[2].push_back(lag_product(f, g, 1, 4, spec.mu));
        }
    }
    const auto ms = stats_of(means);
    CHECK(std::abs(ms.mean - spec.mu) <= 3.0 * ms.se);
    const auto vs = stats_of(vars);
    CHECK(std::abs(vs.mean - spec.sigma2) <= 3.0 * vs.se);
    const std::int64_t lags[3] = {1, 2, 4};
    for (int l = 0; l < 3; ++l) {
        const double expected = spec.sigma2 * std::exp(-static_cast<double>(lags[l]) * g.h / spec.lambda);
        const auto ls = stats_of(lagprods[static_cast<std::size_t>(l)]);
        CHECK(std::abs(ls.mean - expected) <= 3.0 * ls.se);
    }
}

TEST_CASE("real and imaginary fields of one transform are uncorrelated")
{
    GaussianFieldSpec spec;
    spec.sigma2 = 1.0;
    spec.lambda = 0.3;
    spec.norm_r = 2;
    const Grid g(1, 16);
    const auto emb = CirculantEmbedding::build(spec, g);
    RngStream rng(7);
    std::vector<double> prods;
    for (int i = 0; i < 10000; ++i) {
        std::vector<double> a, b;
        emb->sample_pair(rng, a, b);
        prods.push_back(a[3] * b[3]);
    }
    const auto ps = stats_of(prods);
    CHECK(std::abs(ps.mean) <= 3.0 * ps.se);
}

// ---------------------------------------------------------------------------
// Lognormal model, stationarity, extraction

TEST_CASE("lognormal sampler is stationary (two-sample ks test at 1%)")
{
    GaussianFieldSpec spec;
    spec.sigma2 = 1.0;
    spec.lambda = 0.3;
    spec.norm_r = 1;
    LognormalFieldModel model(spec);
    const Grid g(2, 8);

    const int n = 10000;
    std::vector<double> cell_a, cell_b;
    RngStream rng_a(100), rng_b(200); // independent batches
    for (int i = 0; i < n; ++i) {
        cell_a.push_back(std::log(model.sample(g, rng_a).values[0]));
        cell_b.push_back(
            std::log(model.sample(g, rng_b).values[static_cast<std::size_t>(g.lin({5, 7, 1}))]));
    }
    const double d = ks_statistic(cell_a, cell_b);
    const double crit = 1.628 * std::sqrt(2.0 / static_cast<double>(n)); // alpha = 1%
    CHECK(d < crit);
}

TEST_CASE("extraction picks the parity subvectors")
{
    PermeabilitySample fine;
    fine.grid = Grid(1, 4);
    fine.level = 1;
    fine.provenance = FieldProvenance::Stationary;
    fine.values = {10.0, 20.0, 30.0, 40.0};
    const auto odd = extract_coarse_subsample(fine, {0, 0, 0});
    CHECK(odd.values == std::vector<double>{10.0, 30.0});
    CHECK(odd.level == 0);
    const auto even = extract_coarse_subsample(fine, {1, 0, 0});
    CHECK(even.values == std::vector<double>{20.0, 40.0});
}

TEST_CASE("extraction rejects piecewise provenance")
{
    std::array<NormalSpec, 3> specs{};
    PiecewiseConstantModel model(specs);
    RngStream rng(8);
    const auto s = model.sample(Grid(2, 8), rng);
    CHECK_THROWS_WITH_AS(extract_coarse_subsample(s, {0, 0, 0}),
                         "CGV requires stationary permeability", std::invalid_argument);
}

TEST_CASE("every parity subsample reproduces the coarse covariance")
{
    GaussianFieldSpec spec;
    spec.mu = 0.0;
    spec.sigma2 = 1.0;
    spec.lambda = 0.3;
    spec.norm_r = 1;
    LognormalFieldModel model(spec);
    const Grid fine(2, 16);
    const Grid coarse = coarsen(fine);

    RngStream rng(9);
    const int n = 10000;
    const auto offsets = parity_offsets(2);
    std::vector<std::vector<double>> lagprods(offsets.size());
    for (int i = 0; i < n; ++i) {
        const auto s = model.sample(fine, rng);
        for (std::size_t j = 0; j < offsets.size(); ++j) {
            const auto sub = extract_coarse_subsample(s, offsets[j]);
            std::vector<double> logk(sub.values.size());
            for (std::size_t c = 0; c < sub.values.size(); ++c)
                logk[c] = std::log(sub.values[c]);
            lagprods[j].push_back(lag_product(logk, coarse, 0, 1, spec.mu));
        }
    }
    // coarse lag h_c = 2h of the fine grid
    const double expected = spec.sigma2 * std::exp(-2.0 * fine.h / spec.lambda);
    for (const auto& lp : lagprods) {
        const auto ls = stats_of(lp);
        CHECK(std::abs(ls.mean - expected) <= 3.0 * ls.se);
    }
}

TEST_CASE("constant field: subsamples and coupled coarse samples are constant")
{
    GaussianFieldSpec spec;
    spec.sigma2 = 0.0;
    spec.mu = 0.7;
    LognormalFieldModel model(spec);
    RngStream rng(10);
    const Grid fine(2, 8);
    const auto cs = model.sample_coupled(fine, coarsen(fine), rng);
    for (double v : cs.coarse.values)
        CHECK(v == doctest::Approx(std::exp(0.7)));
    for (double v : cs.fine.values)
        CHECK(v == doctest::Approx(std::exp(0.7)));
}

// ---------------------------------------------------------------------------
// Piecewise correlated model

TEST_CASE("piecewise correlated degenerate case: sigma2 = 0 gives layer constants")
{
    std::array<GaussianFieldSpec, 3> specs;
    for (auto& s : specs) {
        s.sigma2 = 0.0;
        s.lambda = 0.3;
        s.norm_r = 2;
    }
    specs[1].mu = 4.0;
    PiecewiseCorrelatedModel model(specs);
    const Grid g(2, 16);
    RngStream rng(11);
    const auto s = model.sample(g, rng);
    for (double v : s.values)
        CHECK((v == doctest::Approx(1.0) || v == doctest::Approx(std::exp(4.0))));
    CHECK(s.values[static_cast<std::size_t>(g.lin({8, 8, 1}))] == doctest::Approx(std::exp(4.0)));
    CHECK(s.values[static_cast<std::size_t>(g.lin({8, 16, 1}))] == doctest::Approx(1.0));
    CHECK(s.values[static_cast<std::size_t>(g.lin({8, 1, 1}))] == doctest::Approx(1.0));
}

TEST_CASE("piecewise correlated with identical layer specs reduces to plain field sampling")
{
    GaussianFieldSpec shared;
    shared.mu = 0.25;
    shared.sigma2 = 1.0;
    shared.lambda = 0.3;
    shared.norm_r = 1;
    std::array<GaussianFieldSpec, 3> specs{shared, shared, shared};
    PiecewiseCorrelatedModel model(specs);
    LognormalFieldModel single(shared);
    const Grid g(2, 8);

    // replay the layered sampler by hand: 4 uniforms, then fields in fifo
    // pair order (layers 1,2 from the first transform, layer 3 from the next)
    RngStream rng_a(12), rng_b(12);
    const auto sa = model.sample(g, rng_a);
    const LayerSample layers = sample_layers(rng_b);
    const auto emb = single.embedding(g);
    const auto [f1, f2] = sample_gaussian_field(*emb, rng_b);
    const auto [f3, f4] = sample_gaussian_field(*emb, rng_b);
    const std::array<const std::vector<double>*, 3> by_layer{&f1, &f2, &f3};
    for (std::int64_t c = 0; c < g.cells(); ++c) {
        const int layer = classify_cell(g.centre(g.delin(c)), layers, 2);
        const double expected =
            std::exp((*by_layer[static_cast<std::size_t>(layer - 1)])[static_cast<std::size_t>(c)]);
        CHECK(sa.values[static_cast<std::size_t>(c)] ==
              doctest::Approx(expected).epsilon(1e-13));
    }
}

TEST_CASE("coupled piecewise samples share the same value sets")
{
    std::array<NormalSpec, 3> specs{};
    specs[0].mu = -1.0;
    specs[1].mu = 0.5;
    specs[2].mu = 2.0;
    PiecewiseConstantModel model(specs);
    RngStream rng(13);
    const Grid fine(2, 16);
    const auto cs = model.sample_coupled(fine, coarsen(fine), rng);
    for (double v : cs.coarse.values) {
        bool found = false;
        for (double w : cs.fine.values)
            if (v == w)
                found = true;
        CHECK(found);
    }
}

TEST_CASE("correlated coupling: coarse values come from the parity-0 children")
{
    std::array<GaussianFieldSpec, 3> specs;
    for (auto& s : specs) {
        s.sigma2 = 1.0;
        s.lambda = 0.3;
        s.norm_r = 1;
    }
    specs[1].mu = 4.0;
    specs[1].lambda = 0.1;
    specs[1].norm_r = 2;
    PiecewiseCorrelatedModel model(specs);
    RngStream rng(14);
    const Grid fine(2, 8);
    const auto cs = model.sample_coupled(fine, coarsen(fine), rng);
    const auto map = subgrid_index_map(fine, {0, 0, 0});
    for (std::size_t c = 0; c < cs.coarse.values.size(); ++c)
        CHECK(cs.coarse.values[c] == cs.fine.values[static_cast<std::size_t>(map[c])]);
}

TEST_CASE("chains couple all levels and keep positive values")
{
    std::array<GaussianFieldSpec, 3> specs;
    for (auto& s : specs) {
        s.sigma2 = 1.0;
        s.lambda = 0.3;
        s.norm_r = 2;
    }
    specs[1].mu = 4.0;
    PiecewiseCorrelatedModel model(specs);
    const auto hier = build_hierarchy(2, 8, 2, 2);
    std::vector<Grid> grids{hier.grid(2), hier.grid(1), hier.grid(0)};
    RngStream rng(15);
    const auto chain = model.sample_chain(grids, rng);
    REQUIRE(chain.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(chain[i].grid.m == grids[i].m);
        for (double v : chain[i].values)
            CHECK(v > 0.0);
    }
}

TEST_CASE("field dump writes row-major doubles")
{
    PermeabilitySample s;
    s.grid = Grid(1, 4);
    s.values = {1.0, 2.0, 3.0, 4.0};
    const std::string path = "test_field_dump.bin";
    write_field_binary(s, path);
    std::ifstream is(path, std::ios::binary);
    std::vector<double> read(4);
    is.read(reinterpret_cast<char*>(read.data()), 4 * sizeof(double));
    CHECK(read == s.values);
    std::remove(path.c_str());
}
