// Acceptance runs: one PASS/FAIL line per criterion.

#include <sys/wait.h>

#include <omp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <sstream>

#include <CLI11.hpp>

#include "oracles.hpp"
#include "saelab/allocation.hpp"
#include "saelab/experiments.hpp"
#include "saelab/io.hpp"
#include "saelab/rng.hpp"
#include "saelab/sae.hpp"
#include "saelab/theory.hpp"

namespace fs = std::filesystem;
namespace alloc = saelab::allocation;
namespace ex = saelab::experiments;
namespace mf = saelab::manifolds;
namespace sae = saelab::sae;
namespace th = saelab::theory;
namespace io = saelab::io;

namespace {

struct Context {
    fs::path out;
    std::size_t threads = 0;
    std::uint64_t seed = 0;
};

struct Verdict {
    bool pass = false;
    std::string detail;
};

class Timer {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), f, args...);
    return buf;
}

void write_rows(const fs::path& p, std::span<const alloc::ScalingRow> rows) {
    std::ostringstream o;
    alloc::write_scaling_csv(o, rows);
    io::write_text(p, o.str());
}

ex::SweepOptions sweep_options(const Context& ctx, std::vector<std::size_t> latents) {
    ex::SweepOptions o;
    o.latents = std::move(latents);
    o.seeds = 3;
    o.config.seed = ctx.seed;
    o.threads = ctx.threads;
    return o;
}

void write_sweep(const fs::path& dir, const ex::SweepResult& r) {
    std::ostringstream o;
    ex::write_sweep_csv(o, r);
    io::write_text(dir.string() + ".csv", o.str());
    io::write_text(dir.string() + ".json", r.to_json().dump(2) + "\n");
}

Verdict regime_run(const Context& ctx, const char* name, double alpha, double beta,
                   std::size_t features, std::int64_t max_budget, th::RegimeTolerances tol) {
    const auto e = alloc::FeatureEnsemble::zipf(alpha, features, alloc::LossCurve::power_law(beta));
    const auto budgets = alloc::log_budgets(10, max_budget, 10);
    const auto rows = alloc::simulate_scaling(e, budgets);
    const auto report = th::verify_regime(rows, th::predict(alpha, beta), tol);
    write_rows(ctx.out / (std::string(name) + ".csv"), rows);
    io::write_text(ctx.out / (std::string(name) + ".json"), report.to_json().dump(2) + "\n");
    const auto& loss = report.checks[0];
    const auto& disc = report.checks[1];
    return {report.pass(),
            fmt("%s, loss slope %.4f (expected %.4f +- %.2f), discovery exponent %.4f "
                "(expected %.4f +- %.2f) over N in [%g, %g]",
                th::to_string(report.prediction.regime).c_str(), -loss.measured, -loss.predicted,
                loss.tolerance, disc.measured, disc.predicted, disc.tolerance, report.window.lo,
                report.window.hi)};
}

Verdict criterion1(const Context& ctx) {
    Timer t;
    const auto e = alloc::FeatureEnsemble::zipf(0.5, 100000, alloc::LossCurve::step(0.0));
    const auto budgets = alloc::log_budgets(10, 10000, 10);
    const auto rows = alloc::simulate_scaling(e, budgets);
    bool d_equals_n = true;
    std::vector<th::Point> pts;
    for (const auto& r : rows) {
        d_equals_n = d_equals_n && r.discovered == static_cast<std::size_t>(r.budget);
        pts.push_back({static_cast<double>(r.budget), r.expected_loss});
    }
    const auto fit = th::fit_power_law(pts);
    const double secs = t.seconds();
    write_rows(ctx.out / "criterion1.csv", rows);
    const bool pass = std::abs(fit.slope + 0.5) <= 0.05 && d_equals_n && secs < 10.0;
    return {pass, fmt("loss slope %.4f (expected -0.50 +- 0.05), D(N)=N at %s of %zu budgets, %.2f s",
                      fit.slope, d_equals_n ? "all" : "not all", rows.size(), secs)};
}

Verdict criterion2(const Context& ctx) {
    Timer t;
    auto v = regime_run(ctx, "criterion2", 0.5, 0.1, 10'000'000, 100'000, {0.03, 0.05});
    const double secs = t.seconds();
    v.pass = v.pass && secs < 60.0;
    v.detail += fmt(", %.2f s", secs);
    return v;
}

Verdict criterion3(const Context& ctx) {
    return regime_run(ctx, "criterion3", 0.3, 1.0, 10'000'000, 100'000, {0.05, 0.05});
}

Verdict criterion4(const Context& ctx) {
    Timer t;
    const auto e = alloc::FeatureEnsemble::zipf_with_head(
        0.5, 10'000'000, {alloc::LossCurve::power_law(0.05)}, alloc::LossCurve::step(0.0));
    const auto budgets = alloc::log_budgets(10, 1'000'000, 10);
    const std::vector<std::size_t> flagged{0};
    const auto rows = alloc::simulate_scaling(e, budgets, flagged);
    const double secs = t.seconds();

    bool ratio_down = true;
    bool frac_up = true;
    std::size_t checked = 0;
    const double start = static_cast<double>(budgets.back()) / 10.0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (static_cast<double>(rows[i - 1].budget) < start) {
            continue;
        }
        ++checked;
        const double prev = static_cast<double>(rows[i - 1].discovered) /
                            static_cast<double>(rows[i - 1].budget);
        const double cur =
            static_cast<double>(rows[i].discovered) / static_cast<double>(rows[i].budget);
        ratio_down = ratio_down && cur < prev;
        frac_up = frac_up && rows[i].frac_latents_feature_1 > rows[i - 1].frac_latents_feature_1;
    }
    std::ostringstream o;
    alloc::write_scaling_csv(o, rows);
    io::write_text(ctx.out / "criterion4.csv", o.str());
    bool baseline_ok = true;
    std::string baseline_note = "no baseline on file";
    const fs::path baseline = fs::path(SAE_LAB_SOURCE_DIR) / "tests/baselines/criterion4.csv";
    if (fs::exists(baseline)) {
        baseline_ok = io::read_text(baseline) == o.str();
        baseline_note = baseline_ok ? "matches stored baseline" : "differs from stored baseline";
    }
    const auto& last = rows.back();
    const bool pass = ratio_down && frac_up && baseline_ok && checked > 0 && secs < 300.0;
    return {pass, fmt("final decade (%zu steps): D/N %s, feature-1 share %s; at N=%lld D/N=%.4f "
                      "share=%.4f; %s; %.1f s",
                      checked, ratio_down ? "strictly decreasing" : "NOT strictly decreasing",
                      frac_up ? "strictly increasing" : "NOT strictly increasing",
                      static_cast<long long>(last.budget),
                      static_cast<double>(last.discovered) / static_cast<double>(last.budget),
                      last.frac_latents_feature_1, baseline_note.c_str(), secs)};
}

Verdict criterion5(const Context& ctx) {
    Timer t;
    std::mt19937_64 rng(saelab::derive_seed(ctx.seed, 5));
    const int trials = 2000;
    int equal = 0;
    for (int i = 0; i < trials; ++i) {
        const auto inst = oracles::random_dyadic_instance(rng);
        const auto a = alloc::greedy_allocate(oracles::ensemble_of(inst), inst.budget);
        equal += a.expected_loss == oracles::brute_force(inst);
    }
    const double secs = t.seconds();
    return {equal == trials && secs < 30.0,
            fmt("%d of %d random instances equal the exhaustive minimum exactly, %.2f s", equal,
                trials, secs)};
}

Verdict criterion6(const Context& ctx) {
    std::mt19937_64 rng(saelab::derive_seed(ctx.seed, 6));
    std::uniform_int_distribution<std::size_t> latents(1, 24);
    std::uniform_int_distribution<std::size_t> dims(2, 8);
    std::uniform_int_distribution<std::size_t> rows_d(1, 48);
    const double h = 1e-6;
    const double floor = 1e-3;
    const int pairs = 120;
    double worst = 0.0;
    std::size_t coords = 0;
    int made = 0;
    int rejected = 0;
    while (made < pairs) {
        const auto nl = rng() % 2 ? sae::Nonlinearity::JumpReLU : sae::Nonlinearity::ReLU;
        const sae::Sparsity sp = rng() % 2 ? sae::Sparsity{sae::L1Penalty{0.2}}
                                           : sae::Sparsity{sae::TanhPenalty{0.5, 0.3}};
        const std::size_t n = latents(rng);
        const std::size_t d = dims(rng);
        const std::size_t rows = rows_d(rng);
        auto m = oracles::random_model(n, d, nl, rng());
        m.bandwidth = 1e-4;
        const auto b = oracles::random_batch(rows, d, rng());
        if (!oracles::away_from_kinks(m, b, rows, 1e-4)) {
            ++rejected;
            continue;
        }
        ++made;
        const auto grad = sae::gradients(m, b, rows, sp);
        auto params = m.parameters();
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double keep = params[i];
            params[i] = keep + h;
            const double up = oracles::oracle_loss(m, b, rows, sp);
            params[i] = keep - h;
            const double down = oracles::oracle_loss(m, b, rows, sp);
            params[i] = keep;
            const double fd = (up - down) / (2.0 * h);
            const double err = std::abs(fd - grad[i]) / std::max({std::abs(fd), std::abs(grad[i]), floor});
            worst = std::max(worst, err);
            ++coords;
        }
    }
    return {worst < 1e-4,
            fmt("%d kink-free pairs (%d resampled), %zu coordinates, max relative error %.3g "
                "(limit 1e-4, denominator floor %g)",
                made, rejected, coords, worst, floor)};
}

Verdict criterion7(const Context& ctx) {
    Timer t;
    const std::vector<std::size_t> ns{4, 8, 24};
    std::vector<ex::TilingResult> res;
    nlohmann::json j = nlohmann::json::array();
    for (auto n : ns) {
        res.push_back(ex::circle_tiling(n, sweep_options(ctx, {n})));
        j.push_back({{"n", n}, {"arcs", res.back().arcs.to_json()},
                     {"sweep", res.back().sweep.to_json()}});
    }
    io::write_text(ctx.out / "criterion7.json", j.dump(2) + "\n");
    bool monotone = true;
    bool contiguous = true;
    std::string losses;
    std::string widths;
    for (std::size_t i = 0; i < res.size(); ++i) {
        const auto& b = res[i].sweep.best.front();
        if (i > 0) {
            const auto& p = res[i - 1].sweep.best.front();
            monotone = monotone && b.loss <= p.loss + 2.0 * std::max(b.std_error, p.std_error);
        }
        contiguous = contiguous && res[i].arcs.contiguous == res[i].arcs.live;
        losses += fmt("%s%zu:%.4f", i ? " " : "", ns[i], b.loss);
        widths += fmt("%s%zu:%.3f", i ? " " : "", ns[i], res[i].arcs.mean_width);
    }
    const bool narrower = res.back().arcs.mean_width < res.front().arcs.mean_width;
    const double secs = t.seconds();
    return {monotone && contiguous && narrower && secs < 600.0,
            fmt("best loss {%s} %s; contiguous arcs %s; mean width {%s}; %.0f s", losses.c_str(),
                monotone ? "non-increasing within 2 SE" : "NOT monotone",
                contiguous ? "100%" : "below 100%", widths.c_str(), secs)};
}

Verdict criterion8(const Context& ctx) {
    Timer t;
    bool pass = true;
    std::string detail;
    for (std::size_t d : {6u, 8u}) {
        mf::ManifoldSpec spec;
        spec.kind = mf::Hypersphere{d};
        const auto r = ex::sweep_Ln(spec, sweep_options(ctx, ex::log2_grid(2, 1024)));
        write_sweep(ctx.out / ("criterion8_d" + std::to_string(d)), r);
        if (!r.fit) {
            pass = false;
            detail += fmt("d=%zu: no fit (%s); ", d, r.fit_error.c_str());
            continue;
        }
        const double s = r.fit->slope;
        pass = pass && s < 0.0 && -s >= 0.01 && -s <= 0.15;
        detail += fmt("d=%zu slope %.4f over n in [%g, %g]; ", d, s, r.fit->x_lo, r.fit->x_hi);
    }
    const double secs = t.seconds();
    pass = pass && secs < 3600.0;
    return {pass, detail + fmt("expected magnitude in [0.01, 0.15]; %.0f s", secs)};
}

Verdict criterion9(const Context& ctx) {
    Timer t;
    mf::ManifoldSpec spec;
    spec.kind = mf::Shell{8, 0.5, 2.0};
    const auto r = ex::sweep_Ln(spec, sweep_options(ctx, {32, 128}));
    write_sweep(ctx.out / "criterion9", r);
    const double l32 = r.best[0].loss;
    const double l128 = r.best[1].loss;
    const double rel = std::abs(l32 - l128) / l128;
    const double secs = t.seconds();
    return {rel < 0.05 && secs < 3600.0,
            fmt("L(32)=%.5f L(128)=%.5f, relative difference %.2f%% (limit 5%%), %.0f s", l32, l128,
                100.0 * rel, secs)};
}

Verdict criterion10(const Context& ctx) {
    const auto comp = mf::axis_aligned_composite({{mf::Circle{}, 0.2}, {mf::Circle{}, 0.2}});
    mf::ManifoldSpec spec;
    spec.kind = comp;
    ex::AdditivityOptions o;
    o.config.seed = ctx.seed;
    o.threads = ctx.threads;
    const auto r = ex::additivity_check(spec, o);
    io::write_text(ctx.out / "criterion10.json", r.to_json().dump(2) + "\n");
    return {r.relative_gap < 0.10,
            fmt("joint L=%.5f, p1 L1(8) + p2 L2(8) = %.5f, relative gap %.2f%% (limit 10%%)",
                r.joint.loss, r.predicted, 100.0 * r.relative_gap)};
}

Verdict criterion11(const Context&) {
    double worst = 0.0;
    int sets = 0;
    for (double slope : {-0.05, -0.5, -1.3, 0.7, -2.0}) {
        for (double c : {0.01, 1.0, 250.0}) {
            std::vector<th::Point> pts;
            for (int k = 0; k <= 40; ++k) {
                const double x = std::pow(10.0, 1.0 + k / 10.0);
                pts.push_back({x, c * std::pow(x, slope)});
            }
            worst = std::max(worst, std::abs(th::fit_power_law(pts).slope - slope));
            ++sets;
        }
    }
    return {worst < 1e-12, fmt("%d exact power-law sets, max |slope error| %.3g", sets, worst)};
}

Verdict criterion12(const Context& ctx) {
    io::Matrix eye{8, 8, std::vector<double>(64, 0.0)};
    for (std::size_t i = 0; i < 8; ++i) {
        eye(i, i) = 1.0;
    }
    const auto id = ex::decoder_geometry(eye);
    bool id_zero = true;
    for (double s : id.similarity) {
        id_zero = id_zero && s == 0.0;
    }

    io::Matrix dup{16, 32, oracles::random_batch(32, 16, 12)};
    for (std::size_t k = 0; k < 16; ++k) {
        dup(k, 31) = dup(k, 4);
    }
    const auto dg = ex::decoder_geometry(dup);
    const bool dup_one =
        std::abs(dg.similarity[4] - 1.0) <= 1e-12 && std::abs(dg.similarity[31] - 1.0) <= 1e-12;

    const auto tile = ex::circle_tiling(64, sweep_options(ctx, {64}));
    const auto& model = tile.sweep.best_models.front();
    mf::ManifoldSpec circle;
    circle.kind = mf::Circle{};
    const std::size_t samples = std::size_t{1} << 16;
    const auto fires =
        ex::activation_counts(model, circle, saelab::derive_seed(tile.sweep.eval_seed, 7), samples);
    const auto geo = ex::decoder_geometry(sae::decoder_matrix(model), {}, fires, samples);
    const auto base =
        ex::random_baseline(geo.live, 2, 100, saelab::derive_seed(ctx.seed, 8));
    io::write_text(ctx.out / "criterion12.json",
                   nlohmann::json{{"trained", geo.to_json()}, {"random_baseline", base.to_json()}}
                           .dump(2) +
                       "\n");
    const bool above = geo.median > base.median;
    return {id_zero && dup_one && above,
            fmt("identity all zero: %s; duplicated column 1.0: %s; circle n=64 (%zu live) median "
                "%.5f vs random baseline median %.5f: %s",
                id_zero ? "yes" : "no", dup_one ? "yes" : "no", geo.live, geo.median, base.median,
                above ? "above" : "NOT above")};
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(SAE_LAB_BINARY) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Output text with run-specific fields (timestamps, wall-clock times) removed.
std::string comparable(const fs::path& p) {
    const std::string name = p.filename().string();
    if (name == "manifest.json") {
        auto j = nlohmann::json::parse(io::read_text(p));
        j.erase("started");
        j.erase("finished");
        return j.dump();
    }
    const std::string text = io::read_text(p);
    if (name != "sweep.csv" && name != "runs.csv") {
        return text;
    }
    std::istringstream in(text);
    std::string out;
    for (std::string line; std::getline(in, line);) {
        out += line.substr(0, line.rfind(',')) + "\n";
    }
    return out;
}

Verdict criterion13(const Context& ctx) {
    const std::string cfg = std::string(SAE_LAB_SOURCE_DIR) + "/configs/zipf_powerlaw.json";
    const std::map<std::string, std::string> jobs{
        {"allocate", "allocate --config " + cfg},
        {"simulate", "simulate --alpha 0.5 --curve power_law --beta 0.1 --features 100000 "
                     "--budget-range 10:100000:10 --format json"},
        {"sweep", "sweep --manifold sphere --dim 6 --latents 2:32:log --seeds 2 --steps 400 "
                  "--save-models --svg"},
        {"tile", "tile --latents 8 --seeds 2 --steps 400 --svg"},
        {"additivity", "additivity --steps 400 --seeds 2"},
    };
    std::size_t files = 0;
    std::vector<std::string> differing;
    for (int rep = 0; rep < 2; ++rep) {
        for (const auto& [name, args] : jobs) {
            const auto dir = ctx.out / "criterion13" / (name + "_" + std::to_string(rep));
            fs::remove_all(dir);
            if (run_cli(args + " --threads 1 --seed " + std::to_string(ctx.seed) + " --out-dir " +
                        dir.string()) != 0) {
                return {false, "sae_lab " + name + " failed"};
            }
        }
        const auto tile = ctx.out / "criterion13" / "tile_0";
        const auto geo = ctx.out / "criterion13" / ("geometry_" + std::to_string(rep));
        fs::remove_all(geo);
        if (run_cli("geometry --weights " + (tile / "model.bin").string() +
                    " --manifold circle --baseline-resamples 20 --threads 1 --out-dir " +
                    geo.string()) != 0) {
            return {false, "sae_lab geometry failed"};
        }
    }
    for (const char* name : {"allocate", "simulate", "sweep", "tile", "additivity", "geometry"}) {
        const auto a = ctx.out / "criterion13" / (std::string(name) + "_0");
        const auto b = ctx.out / "criterion13" / (std::string(name) + "_1");
        for (const auto& entry : fs::recursive_directory_iterator(a)) {
            if (!entry.is_regular_file()) {
                continue;
            }
            const auto rel = fs::relative(entry.path(), a);
            ++files;
            if (!fs::exists(b / rel) || comparable(entry.path()) != comparable(b / rel)) {
                differing.push_back(std::string(name) + "/" + rel.string());
            }
        }
    }
    std::string diff;
    for (const auto& d : differing) {
        diff += " " + d;
    }
    return {differing.empty(),
            fmt("%zu output files compared across two --threads 1 runs of 6 subcommands; %s", files,
                differing.empty() ? "all identical" : ("differ:" + diff).c_str())};
}

const std::map<int, std::function<Verdict(const Context&)>> kCriteria{
    {1, criterion1},   {2, criterion2},   {3, criterion3},   {4, criterion4},   {5, criterion5},
    {6, criterion6},   {7, criterion7},   {8, criterion8},   {9, criterion9},   {10, criterion10},
    {11, criterion11}, {12, criterion12}, {13, criterion13},
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance checks"};
    std::vector<int> which;
    std::string out = "acceptance_out";
    Context ctx;
    app.add_option("--criterion,-c", which, "Criteria to run (default: all)")
        ->check(CLI::Range(1, 13));
    app.add_option("--out-dir", out, "Directory for result tables");
    app.add_option("--threads", ctx.threads, "Worker threads (0 = all)");
    app.add_option("--seed", ctx.seed, "Base seed");
    CLI11_PARSE(app, argc, argv);
    if (which.empty()) {
        for (const auto& [k, f] : kCriteria) {
            which.push_back(k);
        }
    }
    if (ctx.threads > 0) {
        omp_set_num_threads(static_cast<int>(ctx.threads));
    }
    ctx.out = out;
    fs::create_directories(ctx.out);

    int failed = 0;
    for (int k : which) {
        Verdict v;
        try {
            v = kCriteria.at(k)(ctx);
        } catch (const std::exception& e) {
            v = {false, std::string("error: ") + e.what()};
        }
        failed += !v.pass;
        std::cout << "criterion " << k << ": " << (v.pass ? "PASS" : "FAIL") << "  " << v.detail
                  << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
