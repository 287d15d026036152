#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "saelab/allocation.hpp"

using namespace saelab::allocation;
using namespace oracles;

TEST_SUITE("allocation") {

TEST_CASE("step curve values") {
    const auto c = LossCurve::step(0.25);
    CHECK(c(0) == 1.0);
    CHECK(c(1) == 0.25);
    CHECK(c(7) == 0.25);
    CHECK(c.gain(0) == 0.75);
    CHECK(c.gain(3) == 0.0);
}

TEST_CASE("power-law curve matches the formula and stays convex at zero") {
    const auto c = LossCurve::power_law(0.5);
    for (std::int64_t n = 0; n < 50; ++n) {
        CHECK(c(n) == doctest::Approx(oracle_power_law(0.5, n)).epsilon(1e-15));
    }
    for (std::int64_t n = 0; n < 50; ++n) {
        CHECK(c.gain(n) >= c.gain(n + 1) - 1e-15);
        CHECK(c.gain(n) > 0.0);
    }
    const auto f = LossCurve::power_law(0.5, 0.3);
    CHECK(f(4) == doctest::Approx(0.3 + 0.5));
}

TEST_CASE("tabulated curve validation") {
    CHECK_NOTHROW(LossCurve::tabulated({3.0, 2.0, 1.5, 1.25}));
    CHECK_THROWS_AS(LossCurve::tabulated({}), std::invalid_argument);
    CHECK_THROWS_AS(LossCurve::tabulated({1.0, 2.0}), std::invalid_argument);
    CHECK_THROWS_AS(LossCurve::tabulated({3.0, 2.5, 1.0}), std::invalid_argument);
    CHECK_THROWS_AS(LossCurve::tabulated({1.0, NAN}), std::invalid_argument);
    const auto c = LossCurve::tabulated({3.0, 2.0, 1.5});
    CHECK(c(10) == 1.5);
    CHECK_THROWS_AS(LossCurve::power_law(0.0), std::invalid_argument);
    CHECK_THROWS_AS(LossCurve::power_law(0.5, -1.0), std::invalid_argument);
    CHECK_THROWS_AS(c(-1), std::out_of_range);
}

TEST_CASE("curve and ensemble json round trip") {
    for (const auto& c : {LossCurve::step(0.1, 2.0), LossCurve::power_law(0.3, 0.05),
                          LossCurve::tabulated({2.0, 1.0, 0.5})}) {
        CHECK(LossCurve::from_json(c.to_json()) == c);
    }
    const auto e = FeatureEnsemble::zipf_with_head(0.5, 20, {LossCurve::power_law(0.05)},
                                                   LossCurve::step(0.0));
    const auto back = FeatureEnsemble::from_json(e.to_json());
    CHECK(back.size() == e.size());
    CHECK(back.segments() == e.segments());
    CHECK(std::equal(back.frequencies().begin(), back.frequencies().end(),
                     e.frequencies().begin()));
}

TEST_CASE("zipf frequencies follow i^-(1+alpha)") {
    const auto e = FeatureEnsemble::zipf(0.5, 1000, LossCurve::step(0.0));
    for (std::size_t i = 0; i < e.size(); ++i) {
        const double expect = std::pow(static_cast<double>(i + 1), -1.5);
        CHECK(e.frequency(i) / e.frequency(0) == doctest::Approx(expect).epsilon(1e-14));
    }
    const auto n = FeatureEnsemble::zipf(0.5, 1000, LossCurve::step(0.0), true);
    double total = 0.0;
    for (double p : n.frequencies()) {
        total += p;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(n.normalized());
}

TEST_CASE("ensemble validation") {
    const auto c = LossCurve::step(0.0);
    CHECK_THROWS_AS(FeatureEnsemble({0.5, 0.6}, {c}, {{0, 2, 0}}), std::invalid_argument);
    CHECK_THROWS_AS(FeatureEnsemble({0.5, 0.0}, {c}, {{0, 2, 0}}), std::invalid_argument);
    CHECK_THROWS_AS(FeatureEnsemble({0.5, 0.4}, {c}, {{0, 1, 0}}), std::invalid_argument);
    CHECK_THROWS_AS(FeatureEnsemble({}, {c}, {}), std::invalid_argument);
    CHECK_THROWS_AS(FeatureEnsemble::zipf(-2.0, 10, c), std::invalid_argument);
}

TEST_CASE("step features: the N most frequent get one latent each") {
    const FeatureEnsemble e({0.4, 0.3, 0.15, 0.1, 0.05}, {LossCurve::step(0.0)}, {{0, 5, 0}});
    const auto a = greedy_allocate(e, 3);
    CHECK(a.counts == std::vector<std::int64_t>{1, 1, 1, 0, 0});
    CHECK(a.discovered == 3);
    CHECK(a.expected_loss == doctest::Approx(0.15));
}

TEST_CASE("empty budget") {
    const auto e = FeatureEnsemble::zipf(0.5, 10, LossCurve::power_law(0.3));
    const auto a = greedy_allocate(e, 0);
    CHECK(std::all_of(a.counts.begin(), a.counts.end(), [](auto c) { return c == 0; }));
    double expect = 0.0;
    for (double p : e.frequencies()) {
        expect += p * oracle_power_law(0.3, 0);
    }
    CHECK(a.expected_loss == doctest::Approx(expect).epsilon(1e-14));
    CHECK(a.discovered == 0);
    CHECK_THROWS_AS(greedy_allocate(e, -1), std::invalid_argument);
}

TEST_CASE("three power-law features match exhaustive enumeration of all 28 compositions") {
    Instance inst;
    inst.p = {0.5, 0.3, 0.2};
    inst.budget = 6;
    for (int i = 0; i < 3; ++i) {
        std::vector<double> t;
        for (std::int64_t n = 0; n <= 6; ++n) {
            t.push_back(oracle_power_law(0.5, n));
        }
        inst.table.push_back(t);
    }
    std::vector<std::int64_t> best;
    const double min_loss = brute_force(inst, &best);
    const FeatureEnsemble e(inst.p, {LossCurve::power_law(0.5)}, {{0, 3, 0}});
    const auto a = greedy_allocate(e, 6);
    CHECK(a.counts == best);
    CHECK(a.expected_loss == doctest::Approx(min_loss).epsilon(1e-14));
}

TEST_CASE("greedy equals exhaustive minimum on 1000 random convex instances") {
    std::mt19937_64 rng(12345);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto inst = random_dyadic_instance(rng);
        const auto e = ensemble_of(inst);
        const auto a = greedy_allocate(e, inst.budget);
        const double min_loss = brute_force(inst);
        INFO("trial ", trial);
        REQUIRE(naive_loss(e, a.counts) == min_loss);
        REQUIRE(a.expected_loss == min_loss);
    }
}

TEST_CASE("allocation invariants and monotonicity in N") {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 200; ++trial) {
        const auto inst = random_dyadic_instance(rng);
        const auto e = ensemble_of(inst);
        double prev_loss = std::numeric_limits<double>::infinity();
        std::size_t prev_d = 0;
        for (std::int64_t n = 0; n <= 12; ++n) {
            const auto a = greedy_allocate(e, n);
            std::int64_t sum = 0;
            for (auto c : a.counts) {
                sum += c;
            }
            CHECK(sum == n);
            CHECK(a.total_latents == n);
            CHECK(expected_loss(e, a.counts) ==
                  doctest::Approx(a.expected_loss).epsilon(1e-12));
            CHECK(a.expected_loss <= prev_loss);
            CHECK(a.discovered >= prev_d);
            prev_loss = a.expected_loss;
            prev_d = a.discovered;
        }
    }
}

TEST_CASE("exchange stability: moving one latent never helps") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 300; ++trial) {
        const auto inst = random_dyadic_instance(rng);
        const auto e = ensemble_of(inst);
        const auto a = greedy_allocate(e, inst.budget);
        for (std::size_t j = 0; j < a.counts.size(); ++j) {
            if (a.counts[j] == 0) {
                continue;
            }
            for (std::size_t k = 0; k < a.counts.size(); ++k) {
                if (k == j) {
                    continue;
                }
                auto moved = a.counts;
                --moved[j];
                ++moved[k];
                CHECK(naive_loss(e, moved) >= naive_loss(e, a.counts));
            }
        }
    }
}

TEST_CASE("ties break toward the more frequent feature") {
    const FeatureEnsemble e({0.5, 0.5, 0.5}, {LossCurve::step(0.0)}, {{0, 3, 0}});
    CHECK(greedy_allocate(e, 1).counts == std::vector<std::int64_t>{1, 0, 0});
    CHECK(greedy_allocate(e, 2).counts == std::vector<std::int64_t>{1, 1, 0});
}

TEST_CASE("incremental simulation equals fresh greedy runs") {
    const auto e = FeatureEnsemble::zipf_with_head(0.5, 5000, {LossCurve::power_law(0.05)},
                                                   LossCurve::step(0.0));
    const std::vector<std::int64_t> budgets{3, 50, 777, 4000};
    const std::vector<std::size_t> flagged{0, 1};
    const auto rows = simulate_scaling(e, budgets, flagged);
    REQUIRE(rows.size() == budgets.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto fresh = greedy_allocate(e, budgets[r]);
        CHECK(rows[r].budget == budgets[r]);
        CHECK(rows[r].expected_loss == fresh.expected_loss);
        CHECK(rows[r].discovered == fresh.discovered);
        CHECK(rows[r].flagged_counts == std::vector<std::int64_t>{fresh.counts[0], fresh.counts[1]});
        CHECK(rows[r].frac_latents_feature_1 ==
              static_cast<double>(fresh.counts[0]) / static_cast<double>(budgets[r]));
    }
    GreedyAllocator g(e);
    g.advance_to(777);
    CHECK_THROWS_AS(g.advance_to(10), std::invalid_argument);
}

TEST_CASE("simulate_scaling edge cases") {
    const auto steps = FeatureEnsemble::zipf(0.5, 2000, LossCurve::step(0.0));
    const std::vector<std::int64_t> b{10, 100, 1000};
    for (const auto& row : simulate_scaling(steps, b)) {
        CHECK(row.discovered == static_cast<std::size_t>(row.budget));
    }
    const FeatureEnsemble one({1.0}, {LossCurve::power_law(0.5)}, {{0, 1, 0}});
    const std::vector<std::int64_t> b1{1};
    const auto rows = simulate_scaling(one, b1, std::vector<std::size_t>{0});
    CHECK(rows[0].flagged_counts[0] == 1);
    CHECK(rows[0].discovered == 1);
    const std::vector<std::int64_t> bad{10, 5};
    CHECK_THROWS_AS(simulate_scaling(steps, bad), std::invalid_argument);
    const std::vector<std::int64_t> dup{10, 10};
    CHECK_THROWS_AS(simulate_scaling(steps, dup), std::invalid_argument);
}

TEST_CASE("scaling csv layout") {
    const auto e = FeatureEnsemble::zipf(0.5, 100, LossCurve::step(0.0));
    const std::vector<std::int64_t> b{1, 4};
    std::ostringstream o;
    write_scaling_csv(o, simulate_scaling(e, b));
    const std::string s = o.str();
    CHECK(s.rfind("N,expected_loss,discovered,frac_latents_feature_1\n", 0) == 0);
    CHECK(s.find("\n4,") != std::string::npos);
}

TEST_CASE("log budgets") {
    const auto b = log_budgets(10, 10000, 10);
    CHECK(b.front() == 10);
    CHECK(b.back() == 10000);
    CHECK(b.size() == 31);
    CHECK(std::is_sorted(b.begin(), b.end()));
    CHECK(std::adjacent_find(b.begin(), b.end()) == b.end());
}

TEST_CASE("continuous allocation: symmetric pair") {
    const FeatureEnsemble e({0.5, 0.5}, {LossCurve::power_law(1.0)}, {{0, 2, 0}});
    const auto a = continuous_allocate(e, 10.0);
    CHECK(a.counts[0] == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(a.counts[1] == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(a.discovered == 2);
}

TEST_CASE("continuous allocation follows n_i proportional to i^-gamma") {
    const double alpha = 0.5;
    const double beta = 0.25;
    const auto e = FeatureEnsemble::zipf(alpha, 10000, LossCurve::power_law(beta));
    const auto a = continuous_allocate(e, 1000.0);
    double sum = 0.0;
    for (double c : a.counts) {
        sum += c;
    }
    CHECK(sum == doctest::Approx(1000.0).epsilon(1e-9));
    // Least-squares slope of log n_i against log i over discovered features.
    std::vector<double> lx;
    std::vector<double> ly;
    for (std::size_t i = 0; i < a.counts.size(); ++i) {
        if (a.counts[i] > 0.0) {
            CHECK(a.counts[i] >= 1.0 - 1e-12);
            lx.push_back(std::log(static_cast<double>(i + 1)));
            ly.push_back(std::log(a.counts[i]));
        }
    }
    REQUIRE(lx.size() > 10);
    const double n = static_cast<double>(lx.size());
    double mx = 0.0;
    double my = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        mx += lx[i] / n;
        my += ly[i] / n;
    }
    double sxx = 0.0;
    double sxy = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
    }
    CHECK(sxy / sxx == doctest::Approx(-(1.0 + alpha) / (1.0 + beta)).epsilon(0.01 / 1.2));

    const auto g = greedy_allocate(e, 1000);
    CHECK(std::abs(a.expected_loss - g.expected_loss) / g.expected_loss < 0.05);
}

TEST_CASE("continuous allocation rejects mixed or non power-law ensembles") {
    const auto mixed = FeatureEnsemble::zipf_with_head(0.5, 10, {LossCurve::power_law(0.1)},
                                                       LossCurve::power_law(0.2));
    CHECK_THROWS_WITH_AS(continuous_allocate(mixed, 5.0), doctest::Contains("greedy_allocate"),
                         std::invalid_argument);
    const auto steps = FeatureEnsemble::zipf(0.5, 10, LossCurve::step(0.0));
    CHECK_THROWS_AS(continuous_allocate(steps, 5.0), std::invalid_argument);
    const auto pl = FeatureEnsemble::zipf(0.5, 10, LossCurve::power_law(0.2));
    CHECK_THROWS_AS(continuous_allocate(pl, 0.0), std::invalid_argument);
}

}  // TEST_SUITE
