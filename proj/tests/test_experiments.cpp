#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "saelab/experiments.hpp"

using namespace saelab;
using namespace saelab::experiments;

namespace {

io::Matrix random_decoder(std::size_t dim, std::size_t latents, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    io::Matrix m{dim, latents, std::vector<double>(dim * latents)};
    for (auto& v : m.data) {
        v = g(rng);
    }
    return m;
}

// Brute-force cosine nearest neighbour over decoder columns.
std::vector<double> oracle_nn(const io::Matrix& dec) {
    std::vector<double> best(dec.cols, -2.0);
    for (std::size_t i = 0; i < dec.cols; ++i) {
        for (std::size_t j = 0; j < dec.cols; ++j) {
            if (i == j) {
                continue;
            }
            double dot = 0.0;
            double ni = 0.0;
            double nj = 0.0;
            for (std::size_t k = 0; k < dec.rows; ++k) {
                dot += dec(k, i) * dec(k, j);
                ni += dec(k, i) * dec(k, i);
                nj += dec(k, j) * dec(k, j);
            }
            best[i] = std::max(best[i], dot / std::sqrt(ni * nj));
        }
    }
    return best;
}

io::Matrix unit_rows(const io::Matrix& dec) {
    io::Matrix u{dec.cols, dec.rows, std::vector<double>(dec.data.size())};
    for (std::size_t j = 0; j < dec.cols; ++j) {
        double n = 0.0;
        for (std::size_t k = 0; k < dec.rows; ++k) {
            n += dec(k, j) * dec(k, j);
        }
        for (std::size_t k = 0; k < dec.rows; ++k) {
            u(j, k) = dec(k, j) / std::sqrt(n);
        }
    }
    return u;
}

// Single-latent ReLU models on the circle: w = (cos phi, sin phi), bias b.
sae::SaeModel circle_model(const std::vector<std::pair<double, double>>& latents) {
    sae::SaeModel m(latents.size(), 2);
    for (std::size_t j = 0; j < latents.size(); ++j) {
        const auto [phi, b] = latents[j];
        m.encoder_row(j)[0] = std::cos(phi);
        m.encoder_row(j)[1] = std::sin(phi);
        m.decoder_column(j)[0] = std::cos(phi);
        m.decoder_column(j)[1] = std::sin(phi);
        m.encoder_bias()[j] = b;
    }
    return m;
}

sae::TrainConfig quick_config(std::int64_t steps) {
    sae::TrainConfig c;
    c.steps = steps;
    c.batch_size = 256;
    c.learning_rate = 3e-3;
    c.eval_samples = 8192;
    c.log_every = 100;
    return c;
}

}  // namespace

TEST_SUITE("experiments") {

TEST_CASE("latent grids") {
    CHECK(log2_grid(2, 1024) ==
          std::vector<std::size_t>{2, 4, 8, 16, 32, 64, 128, 256, 512, 1024});
    CHECK(parse_latent_grid("2:16:log") == std::vector<std::size_t>{2, 4, 8, 16});
    CHECK(parse_latent_grid("3:6") == std::vector<std::size_t>{3, 4, 5, 6});
    CHECK(parse_latent_grid("4,24,64") == std::vector<std::size_t>{4, 24, 64});
    CHECK_THROWS_AS(parse_latent_grid("8,4"), std::invalid_argument);
    CHECK_THROWS_AS(parse_latent_grid("a:b"), std::invalid_argument);
    CHECK_THROWS_AS(parse_latent_grid("16:2"), std::invalid_argument);
}

TEST_CASE("median") {
    CHECK(median({3.0, 1.0, 2.0}) == 2.0);
    CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
}

TEST_CASE("orthogonal decoder columns have zero neighbour similarity") {
    io::Matrix eye{6, 6, std::vector<double>(36, 0.0)};
    for (std::size_t i = 0; i < 6; ++i) {
        eye(i, i) = 1.0;
    }
    const auto r = decoder_geometry(eye);
    CHECK(r.live == 6);
    for (double s : r.similarity) {
        CHECK(s == 0.0);
    }
    CHECK(r.median == 0.0);
    CHECK(r.high_latents == 0);
}

TEST_CASE("a duplicated column has similarity one") {
    auto dec = random_decoder(16, 40, 3);
    for (std::size_t k = 0; k < 16; ++k) {
        dec(k, 39) = 2.5 * dec(k, 7);
    }
    const auto r = decoder_geometry(dec);
    CHECK(std::abs(r.similarity[7] - 1.0) <= 1e-12);
    CHECK(std::abs(r.similarity[39] - 1.0) <= 1e-12);
    CHECK(r.neighbor[7] == 39);
    CHECK(r.neighbor[39] == 7);
    CHECK(r.high_pairs >= 1);
}

TEST_CASE("neighbour similarity matches brute force and respects symmetries") {
    const auto dec = random_decoder(5, 30, 11);
    const auto r = decoder_geometry(dec);
    const auto expect = oracle_nn(dec);
    for (std::size_t i = 0; i < 30; ++i) {
        CHECK(r.similarity[i] == doctest::Approx(expect[i]).epsilon(1e-12));
    }
    std::vector<std::size_t> perm(30);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(2));
    io::Matrix shuffled = dec;
    for (std::size_t j = 0; j < 30; ++j) {
        const double scale = 0.1 + static_cast<double>(j);
        for (std::size_t k = 0; k < 5; ++k) {
            shuffled(k, j) = scale * dec(k, perm[j]);
        }
    }
    const auto s = decoder_geometry(shuffled);
    for (std::size_t j = 0; j < 30; ++j) {
        CHECK(s.similarity[j] == doctest::Approx(r.similarity[perm[j]]).epsilon(1e-12));
    }
    CHECK(s.median == doctest::Approx(r.median).epsilon(1e-12));
}

TEST_CASE("serial and parallel neighbour kernels agree") {
    const auto u = unit_rows(random_decoder(8, 300, 5));
    std::vector<std::uint8_t> dead(300, 0);
    dead[3] = dead[100] = 1;
    const auto a = kernels::nn_cosine_serial(u, dead, 0.5);
    const auto b = kernels::nn_cosine_parallel(u, dead, 0.5);
    CHECK(a.index == b.index);
    CHECK(a.high_pairs == b.high_pairs);
    for (std::size_t i = 0; i < 300; ++i) {
        if (dead[i]) {
            CHECK(std::isnan(a.similarity[i]));
            CHECK(std::isnan(b.similarity[i]));
        } else {
            CHECK(b.similarity[i] == doctest::Approx(a.similarity[i]).epsilon(1e-14));
        }
    }
}

TEST_CASE("dead latents are excluded") {
    auto dec = random_decoder(4, 10, 8);
    for (std::size_t k = 0; k < 4; ++k) {
        dec(k, 2) = 0.0;
    }
    std::vector<std::size_t> fires(10, 5);
    fires[6] = 0;
    const auto r = decoder_geometry(dec, {}, fires, 100);
    CHECK(r.live == 8);
    CHECK(r.dead[2] == 1);
    CHECK(r.dead[6] == 1);
    CHECK(std::isnan(r.similarity[2]));
    for (std::size_t i = 0; i < 10; ++i) {
        if (!r.dead[i]) {
            CHECK(r.neighbor[i] != 2);
            CHECK(r.neighbor[i] != 6);
        }
    }
    CHECK(std::accumulate(r.histogram.begin(), r.histogram.end(), std::size_t{0}) == 8);
    CHECK(r.bin_edges.size() == 41);
    CHECK(r.fire_fraction[0] == doctest::Approx(0.05));

    io::Matrix one{3, 1, {1.0, 0.0, 0.0}};
    CHECK_THROWS_AS(decoder_geometry(one), std::invalid_argument);
}

TEST_CASE("random high-dimensional decoders are nearly orthogonal") {
    const auto r = decoder_geometry(random_decoder(512, 7680, 17));
    const double mx = *std::max_element(r.similarity.begin(), r.similarity.end());
    CHECK(mx < 0.3);
    CHECK(r.live == 7680);
}

TEST_CASE("random circle baseline matches the nearest-gap distribution") {
    // For n uniform points on a circle the nearest angular gap is
    // exponential with mean pi / n, so its median is ln 2 * pi / n.
    const auto b = random_baseline(64, 2, 300, 1);
    CHECK(b.median == doctest::Approx(std::cos(std::numbers::ln2 * std::numbers::pi / 64.0))
                          .epsilon(1e-4));
    CHECK(b.max <= 1.0);
    CHECK(b.resamples == 300);
    CHECK(random_baseline(64, 2, 10, 5).median == random_baseline(64, 2, 10, 5).median);
}

TEST_CASE("arc analysis on hand-built circle latents") {
    const double half = std::numbers::pi / 4.0;
    const auto m = circle_model({{0.0, -std::cos(half)},
                                 {std::numbers::pi / 2, -std::cos(half)},
                                 {1.0, 2.0},
                                 {2.0, -2.0}});
    const auto r = analyze_arcs(m, 4096);
    const double step = 2 * std::numbers::pi / 4096;
    CHECK(r.live == 3);
    CHECK(r.contiguous == 3);
    CHECK(r.contiguous_fraction() == 1.0);
    CHECK(r.arcs[0].width == doctest::Approx(2 * half).epsilon(2 * step));
    CHECK(r.arcs[1].width == doctest::Approx(2 * half).epsilon(2 * step));
    CHECK(std::abs(r.arcs[1].start - (std::numbers::pi / 2 - half)) < 2 * step);
    CHECK(r.arcs[2].full);
    CHECK(r.arcs[2].width == doctest::Approx(2 * std::numbers::pi));
    CHECK_FALSE(r.arcs[3].live);
    CHECK(r.mean_width == doctest::Approx((4 * half + 2 * std::numbers::pi) / 3).epsilon(1e-3));
    CHECK(r.arcs[0].decoder_x == doctest::Approx(1.0));

    const auto single = analyze_arcs(circle_model({{0.3, -0.5}}), 4096);
    CHECK(single.live == 1);
    CHECK(single.arcs[0].width == doctest::Approx(2 * std::acos(0.5)).epsilon(2 * step));
    CHECK_THROWS_AS(analyze_arcs(sae::SaeModel(3, 3), 64), std::invalid_argument);
}

TEST_CASE("activation counts") {
    const auto m = circle_model({{0.0, 2.0}, {0.0, -2.0}, {0.0, 0.0}});
    const auto c = activation_counts(m, {manifolds::Circle{}, 10, 0}, 4, 20000);
    CHECK(c[0] == 20000);
    CHECK(c[1] == 0);
    CHECK(std::abs(static_cast<double>(c[2]) - 10000.0) < 400);
}

TEST_CASE("a one-point sweep equals a direct training run") {
    const manifolds::ManifoldSpec spec{manifolds::Circle{}, 1024, 3};
    SweepOptions o;
    o.latents = {6};
    o.seeds = 1;
    o.config = quick_config(200);
    o.config.seed = 40;
    const auto r = sweep_Ln(spec, o);
    REQUIRE(r.rows.size() == 1);
    auto c = o.config;
    c.seed = run_seed(o.config, 0);
    c.eval_seed = r.eval_seed;
    const auto direct = sae::train(spec, 6, c);
    CHECK(r.rows[0].final_loss == direct.final_loss.loss);
    CHECK(r.best_models[0] == direct.model);
    CHECK(r.best[0].loss == direct.final_loss.loss);
    CHECK(run_seed(o.config, 2) == 42);
}

TEST_CASE("sweep keeps the best seed per count and writes a table") {
    const manifolds::ManifoldSpec spec{manifolds::Circle{}, 1024, 0};
    SweepOptions o;
    o.latents = {2, 4, 8};
    o.seeds = 2;
    o.config = quick_config(300);
    o.window = {2, 8};
    const auto r = sweep_Ln(spec, o);
    REQUIRE(r.rows.size() == 6);
    for (std::size_t i = 0; i < 3; ++i) {
        const double a = r.rows[2 * i].final_loss;
        const double b = r.rows[2 * i + 1].final_loss;
        CHECK(r.rows[2 * i].n == o.latents[i]);
        CHECK(r.best[i].loss == std::min(a, b));
    }
    REQUIRE(r.fit.has_value());
    CHECK(r.fit->points == 3);
    CHECK(r.fit->slope < 0.0);
    std::ostringstream out;
    write_sweep_csv(out, r, false);
    const std::string csv = out.str();
    CHECK(csv.rfind("n,seed,final_loss,dead_latents,wall_ms\n", 0) == 0);
    CHECK(csv.substr(csv.size() - 2) == ",\n");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);

    SweepOptions bad = o;
    bad.latents = {4, 2};
    CHECK_THROWS_AS(sweep_Ln(spec, bad), std::invalid_argument);
    bad.latents = {};
    CHECK_THROWS_AS(sweep_Ln(spec, bad), std::invalid_argument);
}

TEST_CASE("zero model loss equals the mean squared norm of the data") {
    CHECK(mean_square_norm(manifolds::Circle{}) == 1.0);
    CHECK(mean_square_norm(manifolds::Shell{3, 0.5, 2.0}) == doctest::Approx(7.875 / 4.5));
    const auto comp = manifolds::axis_aligned_composite(
        {{manifolds::Shell{2, 0.5, 1.5}, 0.3}, {manifolds::Circle{}, 0.6}});
    const sae::SaeModel zero(0, 4);
    const auto e = sae::evaluate(zero, {comp, 10, 0}, sae::L1Penalty{}, 9, 100000);
    const double expect = 0.3 * (3.375 - 0.125) / 3.0 + 0.6;
    CHECK(std::abs(e.loss - expect) < 4 * e.std_error);
}

TEST_CASE("additivity with one feature switched off") {
    const auto comp = manifolds::axis_aligned_composite(
        {{manifolds::Circle{}, 1.0}, {manifolds::Circle{}, 0.0}});
    AdditivityOptions o;
    o.n1 = 8;
    o.n2 = 0;
    o.config = quick_config(1500);
    const auto r = additivity_check({comp, 10, 0}, o);
    CHECK(r.single2.loss == doctest::Approx(1.0).epsilon(0.02));
    CHECK(r.predicted == doctest::Approx(r.single1.loss));
    CHECK(r.relative_gap < 0.05);
    CHECK(std::abs(r.zero_loss - r.zero_predicted) < 1e-12);
}

TEST_CASE("svg output is well formed") {
    const auto m = circle_model({{0.0, -0.5}, {2.0, -0.5}});
    const auto s = svg::circle_diagram(analyze_arcs(m, 256));
    CHECK(s.rfind("<svg", 0) == 0);
    CHECK(s.find("</svg>") != std::string::npos);
    const auto h = svg::histogram(decoder_geometry(random_decoder(3, 10, 1)));
    CHECK(h.find("</svg>") != std::string::npos);
}

}  // TEST_SUITE
