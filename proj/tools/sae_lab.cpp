#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "options.hpp"
#include "saelab/allocation.hpp"
#include "saelab/experiments.hpp"
#include "saelab/io.hpp"
#include "saelab/manifolds.hpp"
#include "saelab/sae.hpp"
#include "saelab/theory.hpp"
#include "saelab/version.hpp"

using nlohmann::json;
using sae_lab::Command;
using sae_lab::ConfigError;
using sae_lab::ParamType;
using sae_lab::RunDir;
namespace alloc = saelab::allocation;
namespace ex = saelab::experiments;
namespace mf = saelab::manifolds;
namespace sae = saelab::sae;
namespace theory = saelab::theory;

namespace {

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

// ---- allocation ----------------------------------------------------------

void add_ensemble_options(Command& c) {
    c.add("alpha", ParamType::Float, nullptr, "Zipf exponent: p_i proportional to i^-(1+alpha)");
    c.add("features", ParamType::Int, 1000, "Number of features");
    c.add("curve", ParamType::String, "step", "Per-feature loss curve: step or power_law");
    c.add("beta", ParamType::Float, nullptr, "Power-law curve exponent");
    c.add("satisfied_loss", ParamType::Float, 0.0, "Step curve loss with >= 1 latent");
    c.add("floor", ParamType::Float, 0.0, "Power-law curve floor");
    c.add("head_beta", ParamType::Float, nullptr,
          "Give feature 1 its own power-law curve with this exponent");
    c.add("normalize", ParamType::Bool, false, "Normalize frequencies to probabilities");
    c.add("budget", ParamType::Int, nullptr, "Single latent budget N");
    c.add("budgets", ParamType::IntList, nullptr, "Ascending list of budgets");
    c.add("budget_range", ParamType::String, nullptr, "lo:hi:per_decade log-spaced budgets");
    c.add("flagged", ParamType::IntList, nullptr, "1-based feature ranks whose counts are reported");
    c.require("alpha");
}

alloc::LossCurve curve_from(const json& cfg) {
    const auto kind = cfg.at("curve").get<std::string>();
    if (kind == "step") {
        return alloc::LossCurve::step(cfg.at("satisfied_loss").get<double>());
    }
    if (kind == "power_law") {
        if (cfg.at("beta").is_null()) {
            throw ConfigError("--curve power_law needs --beta", true);
        }
        return alloc::LossCurve::power_law(cfg.at("beta").get<double>(),
                                           cfg.at("floor").get<double>());
    }
    throw ConfigError("--curve must be step or power_law, got '" + kind + "'");
}

alloc::FeatureEnsemble ensemble_from(const json& cfg) {
    const auto count = cfg.at("features").get<std::int64_t>();
    if (count <= 0) {
        throw ConfigError("--features must be positive");
    }
    const auto tail = curve_from(cfg);
    const double alpha = cfg.at("alpha").get<double>();
    const bool normalize = cfg.at("normalize").get<bool>();
    if (!cfg.at("head_beta").is_null()) {
        return alloc::FeatureEnsemble::zipf_with_head(
            alpha, static_cast<std::size_t>(count),
            {alloc::LossCurve::power_law(cfg.at("head_beta").get<double>())}, tail, normalize);
    }
    return alloc::FeatureEnsemble::zipf(alpha, static_cast<std::size_t>(count), tail, normalize);
}

std::vector<std::int64_t> budgets_from(const json& cfg) {
    const int given = !cfg.at("budget").is_null() + !cfg.at("budgets").is_null() +
                      !cfg.at("budget_range").is_null();
    if (given == 0) {
        throw ConfigError("missing required option --budget (or --budgets / --budget-range)", true);
    }
    if (given > 1) {
        throw ConfigError("give only one of --budget, --budgets, --budget-range");
    }
    if (!cfg.at("budget").is_null()) {
        return {cfg.at("budget").get<std::int64_t>()};
    }
    if (!cfg.at("budgets").is_null()) {
        const auto& b = cfg.at("budgets");
        if (b.is_number()) {
            return {b.get<std::int64_t>()};
        }
        return b.get<std::vector<std::int64_t>>();
    }
    const auto text = cfg.at("budget_range").get<std::string>();
    long long lo = 0;
    long long hi = 0;
    int per = 0;
    char tail = 0;
    if (std::sscanf(text.c_str(), "%lld:%lld:%d%c", &lo, &hi, &per, &tail) != 3) {
        throw ConfigError("--budget-range must look like lo:hi:per_decade, got '" + text + "'");
    }
    return alloc::log_budgets(lo, hi, per);
}

std::vector<std::size_t> flagged_from(const json& cfg, std::size_t features) {
    std::vector<std::size_t> out;
    if (cfg.at("flagged").is_null()) {
        return out;
    }
    const auto& f = cfg.at("flagged");
    const auto ranks = f.is_number() ? std::vector<std::int64_t>{f.get<std::int64_t>()}
                                     : f.get<std::vector<std::int64_t>>();
    for (auto r : ranks) {
        if (r < 1 || static_cast<std::size_t>(r) > features) {
            throw ConfigError("--flagged ranks must be in 1.." + std::to_string(features));
        }
        out.push_back(static_cast<std::size_t>(r - 1));
    }
    return out;
}

void write_counts(RunDir& run, const alloc::FeatureEnsemble& ens,
                  std::span<const std::int64_t> counts) {
    std::ostringstream o;
    o << "feature,frequency,count\n";
    for (std::size_t i = 0; i < counts.size(); ++i) {
        if (counts[i] > 0) {
            o << i + 1 << ',' << saelab::io::format_double(ens.frequency(i)) << ',' << counts[i]
              << '\n';
        }
    }
    run.write("counts.csv", o.str());
}

int run_allocate(Command& cmd, const json& cfg, RunDir& run) {
    const auto ens = ensemble_from(cfg);
    const auto budgets = budgets_from(cfg);
    const auto flagged = flagged_from(cfg, ens.size());
    const auto solver = cfg.at("solver").get<std::string>();
    if (solver == "greedy") {
        const auto rows = alloc::simulate_scaling(ens, budgets, flagged);
        if (cmd.format == "csv") {
            std::ostringstream o;
            alloc::write_scaling_csv(o, rows);
            run.write("allocation.csv", o.str());
        } else {
            run.write_json("allocation.json", alloc::scaling_to_json(rows, flagged));
        }
        const auto final_alloc = alloc::greedy_allocate(ens, budgets.back());
        write_counts(run, ens, final_alloc.counts);
        const auto& last = rows.back();
        std::cout << "N=" << last.budget << " expected_loss=" << last.expected_loss
                  << " discovered=" << last.discovered << '\n';
        return 0;
    }
    if (solver != "continuous") {
        throw ConfigError("--solver must be greedy or continuous, got '" + solver + "'");
    }
    json rows_j = json::array();
    std::ostringstream o;
    o << "N,expected_loss,discovered,kappa\n";
    alloc::ContinuousAllocation last;
    for (auto n : budgets) {
        last = alloc::continuous_allocate(ens, static_cast<double>(n));
        o << n << ',' << saelab::io::format_double(last.expected_loss) << ',' << last.discovered
          << ',' << saelab::io::format_double(last.kappa) << '\n';
        rows_j.push_back({{"N", n},
                          {"expected_loss", last.expected_loss},
                          {"discovered", last.discovered},
                          {"kappa", last.kappa}});
    }
    if (cmd.format == "csv") {
        run.write("allocation.csv", o.str());
    } else {
        run.write_json("allocation.json", rows_j);
    }
    std::ostringstream c;
    c << "feature,frequency,count\n";
    for (std::size_t i = 0; i < last.counts.size(); ++i) {
        if (last.counts[i] > 0.0) {
            c << i + 1 << ',' << saelab::io::format_double(ens.frequency(i)) << ','
              << saelab::io::format_double(last.counts[i]) << '\n';
        }
    }
    run.write("counts.csv", c.str());
    std::cout << "N=" << budgets.back() << " expected_loss=" << last.expected_loss
              << " discovered=" << last.discovered << '\n';
    return 0;
}

int run_simulate(Command& cmd, const json& cfg, RunDir& run) {
    const auto ens = ensemble_from(cfg);
    const auto budgets = budgets_from(cfg);
    auto flagged = flagged_from(cfg, ens.size());
    const auto rows = alloc::simulate_scaling(ens, budgets, flagged);
    if (cmd.format == "csv") {
        std::ostringstream o;
        alloc::write_scaling_csv(o, rows);
        run.write("scaling.csv", o.str());
    } else {
        run.write_json("scaling.json", alloc::scaling_to_json(rows, flagged));
    }

    json report{{"ensemble",
                 {{"features", ens.size()}, {"alpha", cfg.at("alpha")}, {"curves",
                   json::array()}}}};
    for (const auto& c : ens.curves()) {
        report["ensemble"]["curves"].push_back(c.to_json());
    }
    std::vector<theory::Point> loss_pts;
    std::vector<theory::Point> disc_pts;
    for (const auto& r : rows) {
        if (r.budget > 0) {
            loss_pts.push_back({static_cast<double>(r.budget), r.expected_loss});
            disc_pts.push_back({static_cast<double>(r.budget), static_cast<double>(r.discovered)});
        }
    }
    theory::FitWindow window;
    window.lo = cfg.at("fit_lo").is_null() ? 0.0 : cfg.at("fit_lo").get<double>();
    window.hi = cfg.at("fit_hi").is_null() ? HUGE_VAL : cfg.at("fit_hi").get<double>();
    try {
        const auto lf = theory::fit_power_law(loss_pts, window);
        const auto df = theory::fit_power_law(disc_pts, window);
        report["loss_fit"] = lf.to_json();
        report["discovery_fit"] = df.to_json();
        std::cout << "loss_slope=" << fixed(lf.slope, 4) << " discovery_slope=" << fixed(df.slope, 4)
                  << '\n';
    } catch (const std::invalid_argument& e) {
        report["fit_error"] = e.what();
    }
    const auto& curve0 = ens.curves().front();
    if (ens.uniform_curve() && curve0.kind() == alloc::LossCurve::Kind::PowerLaw) {
        const auto pred = theory::predict(cfg.at("alpha").get<double>(), curve0.beta());
        try {
            const auto rep = theory::verify_regime(rows, pred, {});
            report["regime"] = rep.to_json();
            theory::print_regime_table(std::cout, rep);
        } catch (const std::invalid_argument& e) {
            report["regime_error"] = e.what();
        }
    }
    run.write_json("report.json", report);
    const auto& last = rows.back();
    std::cout << "N=" << last.budget << " expected_loss=" << last.expected_loss
              << " discovered=" << last.discovered
              << " frac_latents_feature_1=" << last.frac_latents_feature_1 << '\n';
    return 0;
}

int run_predict(Command&, const json& cfg, RunDir& run) {
    const auto p = theory::predict(cfg.at("alpha").get<double>(), cfg.at("beta").get<double>());
    run.write_json("prediction.json", p.to_json());
    std::cout << "regime=" << theory::to_string(p.regime) << '\n'
              << "loss_exponent=" << fixed(p.loss_exponent, 4) << '\n'
              << "discovery_exponent=" << fixed(p.discovery_exponent, 4) << '\n'
              << "gamma=" << fixed(p.gamma, 4) << '\n';
    if (p.degenerate) {
        std::cout << "note=alpha and beta coincide; exponents are the shared limit\n";
    }
    return 0;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) {
            cell.pop_back();
        }
        out.push_back(cell);
    }
    return out;
}

int run_fit(Command&, const json& cfg, RunDir& run) {
    const auto path = cfg.at("input").get<std::string>();
    std::istringstream in(saelab::io::read_text(path));
    std::string line;
    if (!std::getline(in, line)) {
        throw ConfigError(path + ": empty file");
    }
    const auto header = split_csv_line(line);
    const auto column = [&](const std::string& key, std::size_t fallback) {
        if (cfg.at(key).is_null()) {
            if (fallback >= header.size()) {
                throw ConfigError(path + ": needs at least two columns");
            }
            return fallback;
        }
        const auto name = cfg.at(key).get<std::string>();
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) {
            throw ConfigError(path + ": no column named '" + name + "'");
        }
        return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t xc = column("x_column", 0);
    const std::size_t yc = column("y_column", 1);
    std::vector<theory::Point> pts;
    for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
        if (line.empty()) {
            continue;
        }
        const auto cells = split_csv_line(line);
        if (cells.size() <= std::max(xc, yc)) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": too few columns");
        }
        try {
            pts.push_back({std::stod(cells[xc]), std::stod(cells[yc])});
        } catch (const std::exception&) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": not a number");
        }
    }
    theory::FitWindow window;
    window.lo = cfg.at("lo").is_null() ? 0.0 : cfg.at("lo").get<double>();
    window.hi = cfg.at("hi").is_null() ? HUGE_VAL : cfg.at("hi").get<double>();
    const auto fit = theory::fit_power_law(pts, window);
    run.write_json("fit.json", fit.to_json());
    std::cout << "slope=" << fit.slope << " intercept=" << fit.intercept
              << " points=" << fit.points << '\n';
    return 0;
}

// ---- training-based commands ----------------------------------------------

void add_training_options(Command& c, std::int64_t steps = 12000) {
    c.add("steps", ParamType::Int, steps, "Adam steps");
    c.add("batch_size", ParamType::Int, 2048, "Samples per step");
    c.add("learning_rate", ParamType::Float, 1e-3, "Adam learning rate");
    c.add("penalty", ParamType::String, "l1", "Sparsity penalty: l1 or tanh");
    c.add("lambda", ParamType::Float, 0.1, "L1 coefficient");
    c.add("tanh_c", ParamType::Float, 0.1, "tanh penalty scale c");
    c.add("tanh_lambda", ParamType::Float, 1.0, "tanh penalty coefficient");
    c.add("nonlinearity", ParamType::String, "relu", "relu or jumprelu");
    c.add("eval_samples", ParamType::Int, 32768, "Held-out samples for the final loss");
    c.add("eval_seed", ParamType::Int, nullptr, "Held-out stream seed (default derived from seed)");
    c.add("log_every", ParamType::Int, 100, "Steps per history row");
    c.add("init_scale", ParamType::Float, 0.1, "Initial encoder row norm");
}

sae::TrainConfig train_config_from(const json& cfg) {
    sae::TrainConfig t;
    const auto positive = [&](const char* key) {
        const auto v = cfg.at(key).get<std::int64_t>();
        if (v <= 0) {
            throw ConfigError(std::string("--") + key + " must be positive");
        }
        return v;
    };
    t.steps = cfg.at("steps").get<std::int64_t>();
    if (t.steps < 0) {
        throw ConfigError("--steps must be non-negative");
    }
    t.batch_size = static_cast<std::size_t>(positive("batch_size"));
    t.learning_rate = cfg.at("learning_rate").get<double>();
    const auto pen = cfg.at("penalty").get<std::string>();
    if (pen == "l1") {
        t.sparsity = sae::L1Penalty{cfg.at("lambda").get<double>()};
    } else if (pen == "tanh") {
        t.sparsity = sae::TanhPenalty{cfg.at("tanh_c").get<double>(),
                                      cfg.at("tanh_lambda").get<double>()};
    } else {
        throw ConfigError("--penalty must be l1 or tanh, got '" + pen + "'");
    }
    t.nonlinearity = sae::nonlinearity_from_string(cfg.at("nonlinearity").get<std::string>());
    t.seed = cfg.at("seed").get<std::uint64_t>();
    if (!cfg.at("eval_seed").is_null()) {
        t.eval_seed = cfg.at("eval_seed").get<std::uint64_t>();
    }
    t.eval_samples = static_cast<std::size_t>(positive("eval_samples"));
    t.log_every = positive("log_every");
    t.init_scale = cfg.at("init_scale").get<double>();
    t.validate();
    return t;
}

void add_manifold_options(Command& c, const char* default_kind, std::int64_t default_dim) {
    c.add("manifold", ParamType::String, default_kind, "circle, sphere or shell");
    c.add("dim", ParamType::Int, default_dim, "Ambient dimension (sphere and shell)");
    c.add("r_min", ParamType::Float, 0.5, "Shell inner radius");
    c.add("r_max", ParamType::Float, 2.0, "Shell outer radius");
}

mf::Geometry geometry_from(const std::string& kind, const json& cfg) {
    const auto dim = cfg.at("dim").get<std::int64_t>();
    if (kind == "circle") {
        return mf::Circle{};
    }
    if (dim <= 0) {
        throw ConfigError("--dim must be positive");
    }
    if (kind == "sphere" || kind == "hypersphere") {
        return mf::Hypersphere{static_cast<std::size_t>(dim)};
    }
    if (kind == "shell") {
        return mf::Shell{static_cast<std::size_t>(dim), cfg.at("r_min").get<double>(),
                         cfg.at("r_max").get<double>()};
    }
    throw ConfigError("unknown manifold '" + kind + "' (circle, sphere, shell)");
}

mf::ManifoldSpec manifold_from(const json& cfg) {
    mf::ManifoldSpec spec;
    std::visit([&](const auto& g) { spec.kind = g; },
               geometry_from(cfg.at("manifold").get<std::string>(), cfg));
    spec.seed = cfg.at("seed").get<std::uint64_t>();
    mf::validate(spec);
    return spec;
}

std::string sweep_csv(const ex::SweepResult& r) {
    std::ostringstream o;
    ex::write_sweep_csv(o, r);
    return o.str();
}

std::string history_csv(const std::vector<sae::HistoryRow>& h) {
    std::ostringstream o;
    sae::write_history_csv(o, h);
    return o.str();
}

int run_sweep(Command& cmd, const json& cfg, RunDir& run) {
    ex::SweepOptions opts;
    opts.latents = ex::parse_latent_grid(cfg.at("latents").get<std::string>());
    opts.seeds = static_cast<std::size_t>(cfg.at("seeds").get<std::int64_t>());
    opts.config = train_config_from(cfg);
    opts.window = {cfg.at("window_lo").get<double>(), cfg.at("window_hi").get<double>()};
    opts.threads = static_cast<std::size_t>(cmd.threads);
    const auto spec = manifold_from(cfg);
    const auto result = ex::sweep_Ln(spec, opts);

    if (cmd.format == "csv") {
        run.write("sweep.csv", sweep_csv(result));
    }
    run.write_json(cmd.format == "csv" ? "summary.json" : "sweep.json", result.to_json());
    for (std::size_t i = 0; i < result.best.size(); ++i) {
        const std::string n = std::to_string(result.best[i].n);
        run.write("history/n" + n + ".csv", history_csv(result.best_histories[i]));
        if (cfg.at("save_models").get<bool>()) {
            sae::save_checkpoint(run.file("models/n" + n + ".bin"), result.best_models[i], cfg);
            run.file("models/n" + n + ".bin.json");
        }
    }
    if (cmd.svg) {
        run.write("loss_curve.svg", ex::svg::loss_curve(result));
    }
    for (const auto& b : result.best) {
        std::cout << "n=" << b.n << " best_loss=" << b.loss << " (seed " << b.seed << ")\n";
    }
    if (result.fit) {
        std::cout << "slope=" << fixed(result.fit->slope, 4) << " over [" << result.fit->x_lo
                  << ", " << result.fit->x_hi << "]\n";
    } else {
        std::cout << "slope unavailable: " << result.fit_error << '\n';
    }
    if (!result.violations.empty()) {
        std::cout << "monotonicity violations: " << result.violations.size() << '\n';
    }
    return 0;
}

int run_tile(Command& cmd, const json& cfg, RunDir& run) {
    ex::SweepOptions opts;
    opts.seeds = static_cast<std::size_t>(cfg.at("seeds").get<std::int64_t>());
    opts.config = train_config_from(cfg);
    opts.threads = static_cast<std::size_t>(cmd.threads);
    const auto n = cfg.at("latents").get<std::int64_t>();
    const auto grid = cfg.at("grid").get<std::int64_t>();
    if (n <= 0 || grid < 3) {
        throw ConfigError("--latents must be positive and --grid at least 3");
    }
    const auto r = ex::circle_tiling(static_cast<std::size_t>(n), opts,
                                     static_cast<std::size_t>(grid));
    if (cmd.format == "csv") {
        run.write("runs.csv", sweep_csv(r.sweep));
    }
    run.write_json("arcs.json", r.arcs.to_json());
    run.write_json(cmd.format == "csv" ? "summary.json" : "runs.json", r.sweep.to_json());
    run.write("history.csv", history_csv(r.sweep.best_histories.front()));
    sae::save_checkpoint(run.file("model.bin"), r.sweep.best_models.front(), cfg);
    run.file("model.bin.json");
    if (cmd.svg) {
        run.write("circle.svg", ex::svg::circle_diagram(r.arcs));
    }
    std::cout << "loss=" << r.arcs.loss.loss << " live=" << r.arcs.live
              << " contiguous=" << r.arcs.contiguous << " mean_arc_width=" << r.arcs.mean_width
              << '\n';
    return 0;
}

int run_additivity(Command& cmd, const json& cfg, RunDir& run) {
    ex::AdditivityOptions opts;
    opts.config = train_config_from(cfg);
    opts.n1 = static_cast<std::size_t>(cfg.at("n1").get<std::int64_t>());
    opts.n2 = static_cast<std::size_t>(cfg.at("n2").get<std::int64_t>());
    opts.seeds = static_cast<std::size_t>(cfg.at("seeds").get<std::int64_t>());
    opts.threads = static_cast<std::size_t>(cmd.threads);
    const auto g1 = geometry_from(cfg.at("feature1").get<std::string>(), cfg);
    const auto g2 = geometry_from(cfg.at("feature2").get<std::string>(), cfg);
    mf::ManifoldSpec spec;
    spec.kind = mf::axis_aligned_composite(
        {{g1, cfg.at("p1").get<double>()}, {g2, cfg.at("p2").get<double>()}});
    spec.seed = cfg.at("seed").get<std::uint64_t>();
    const auto rep = ex::additivity_check(spec, opts);
    run.write_json("additivity.json", rep.to_json());
    std::cout << "joint=" << rep.joint.loss << " predicted=" << rep.predicted
              << " relative_gap=" << rep.relative_gap << '\n'
              << "zero_model=" << rep.zero_loss << " zero_predicted=" << rep.zero_predicted
              << '\n';
    return 0;
}

int run_geometry(Command& cmd, const json& cfg, RunDir& run) {
    const std::filesystem::path weights = cfg.at("weights").get<std::string>();
    json sidecar;
    saelab::io::Matrix decoder;
    std::optional<sae::SaeModel> model;
    {
        json meta;
        (void)saelab::io::read_binary(weights, &meta);
        if (meta.value("format", "") == "saelab-checkpoint-1") {
            model = sae::load_checkpoint(weights);
            decoder = sae::decoder_matrix(*model);
        } else {
            decoder = saelab::io::read_matrix(weights);
        }
    }
    std::vector<std::size_t> counts;
    std::size_t samples = 0;
    if (!cfg.at("manifold").is_null()) {
        if (!model) {
            throw ConfigError("--manifold needs a checkpoint (plain matrices have no encoder)");
        }
        const auto spec = manifold_from(cfg);
        samples = static_cast<std::size_t>(cfg.at("dead_samples").get<std::int64_t>());
        counts = ex::activation_counts(*model, spec,
                                       saelab::derive_seed(cfg.at("seed").get<std::uint64_t>(), 7),
                                       samples);
    }
    ex::GeometryOptions go;
    go.bins = static_cast<std::size_t>(cfg.at("bins").get<std::int64_t>());
    go.high = cfg.at("high").get<double>();
    const auto rep = ex::decoder_geometry(decoder, go, counts, samples);
    json out = rep.to_json();
    const auto resamples = cfg.at("baseline_resamples").get<std::int64_t>();
    if (resamples > 0) {
        const auto base =
            ex::random_baseline(rep.live, decoder.rows, static_cast<std::size_t>(resamples),
                                saelab::derive_seed(cfg.at("seed").get<std::uint64_t>(), 8));
        out["random_baseline"] = base.to_json();
        std::cout << "random_baseline_median=" << base.median << '\n';
    }
    if (cmd.format == "csv") {
        std::ostringstream o;
        o << "latent,dead,similarity,neighbor\n";
        for (std::size_t j = 0; j < rep.latents; ++j) {
            o << j << ',' << int(rep.dead[j]) << ',';
            if (!rep.dead[j]) {
                o << saelab::io::format_double(rep.similarity[j]) << ',' << rep.neighbor[j];
            } else {
                o << ',';
            }
            o << '\n';
        }
        run.write("neighbors.csv", o.str());
    }
    run.write_json("geometry.json", out);
    if (cmd.svg) {
        run.write("histogram.svg", ex::svg::histogram(rep));
    }
    std::cout << "live=" << rep.live << " median=" << rep.median << " above_" << rep.high << "="
              << rep.high_latents << " high_pairs=" << rep.high_pairs << '\n';
    return 0;
}

struct Entry {
    std::unique_ptr<Command> cmd;
    std::function<int(Command&, const json&, RunDir&)> run;
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sae_lab: latent allocation theory and synthetic SAE scaling experiments"};
    app.set_version_flag("--version", saelab::kVersion);
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);

    std::vector<Entry> entries;
    const auto make = [&](const std::string& name, const std::string& desc, auto runner) -> Command& {
        entries.push_back({std::make_unique<Command>(app, name, desc), runner});
        return *entries.back().cmd;
    };

    {
        auto& c = make("allocate", "Optimal latent allocation for a Zipf feature ensemble",
                       run_allocate);
        add_ensemble_options(c);
        c.add("solver", ParamType::String, "greedy", "greedy (exact) or continuous");
    }
    {
        auto& c = make("simulate", "Scaling simulation over a budget range with regime checks",
                       run_simulate);
        add_ensemble_options(c);
        c.add("fit_lo", ParamType::Float, nullptr, "Lower budget of the slope fits");
        c.add("fit_hi", ParamType::Float, nullptr, "Upper budget of the slope fits");
    }
    {
        auto& c = make("predict", "Predicted regime and exponents for (alpha, beta)", run_predict);
        c.add("alpha", ParamType::Float, nullptr, "Zipf exponent");
        c.add("beta", ParamType::Float, nullptr, "Per-feature loss exponent");
        c.require("alpha");
        c.require("beta");
    }
    {
        auto& c = make("fit", "Log-log least-squares power-law fit of a CSV", run_fit);
        c.add("input", ParamType::String, nullptr, "CSV file with a header row");
        c.add("x_column", ParamType::String, nullptr, "x column name (default: first)");
        c.add("y_column", ParamType::String, nullptr, "y column name (default: second)");
        c.add("lo", ParamType::Float, nullptr, "Smallest x in the fit window");
        c.add("hi", ParamType::Float, nullptr, "Largest x in the fit window");
        c.require("input");
    }
    {
        auto& c = make("sweep", "Train SAEs over a latent grid and fit L(n)", run_sweep);
        add_manifold_options(c, "sphere", 8);
        c.add("latents", ParamType::String, "2:1024:log", "Latent grid: lo:hi:log, lo:hi or a,b,c");
        c.add("seeds", ParamType::Int, 3, "Seeds per grid point (best is kept)");
        c.add("window_lo", ParamType::Float, 100.0, "Fit window lower n");
        c.add("window_hi", ParamType::Float, 1000.0, "Fit window upper n");
        c.add("save_models", ParamType::Bool, false, "Write the best checkpoint for every n");
        add_training_options(c);
    }
    {
        auto& c = make("tile", "Circle SAE and its latent activation arcs", run_tile);
        c.add("latents", ParamType::Int, 24, "Number of latents");
        c.add("seeds", ParamType::Int, 3, "Seeds (best is kept)");
        c.add("grid", ParamType::Int, 4096, "Angles in the evaluation grid");
        add_training_options(c);
    }
    {
        auto& c = make("additivity", "Joint composite loss versus sum of per-feature losses",
                       run_additivity);
        c.add("feature1", ParamType::String, "circle", "First feature manifold");
        c.add("feature2", ParamType::String, "circle", "Second feature manifold");
        c.add("dim", ParamType::Int, 2, "Dimension of sphere or shell features");
        c.add("r_min", ParamType::Float, 0.5, "Shell inner radius");
        c.add("r_max", ParamType::Float, 2.0, "Shell outer radius");
        c.add("p1", ParamType::Float, 0.2, "Frequency of the first feature");
        c.add("p2", ParamType::Float, 0.2, "Frequency of the second feature");
        c.add("n1", ParamType::Int, 8, "Latents for the first feature");
        c.add("n2", ParamType::Int, 8, "Latents for the second feature");
        c.add("seeds", ParamType::Int, 1, "Seeds per training run (best is kept)");
        add_training_options(c);
    }
    {
        auto& c = make("geometry", "Decoder nearest-neighbour cosine similarities", run_geometry);
        c.add("weights", ParamType::String, nullptr,
              "Checkpoint or dim x latents matrix (.bin with .json sidecar)");
        c.add("manifold", ParamType::String, nullptr,
              "Flag latents that never fire on this manifold as dead (checkpoints only)");
        c.add("dim", ParamType::Int, 2, "Manifold dimension for --manifold");
        c.add("r_min", ParamType::Float, 0.5, "Shell inner radius");
        c.add("r_max", ParamType::Float, 2.0, "Shell outer radius");
        c.add("dead_samples", ParamType::Int, 65536, "Samples used to find dead latents");
        c.add("bins", ParamType::Int, 40, "Histogram bins over [-1, 1]");
        c.add("high", ParamType::Float, 0.97, "High-similarity threshold");
        c.add("baseline_resamples", ParamType::Int, 100,
              "Random unit-vector baseline draws (0 disables)");
        c.require("weights");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    for (auto& e : entries) {
        Command& cmd = *e.cmd;
        if (!cmd.app()->parsed()) {
            continue;
        }
        try {
            const json cfg = cmd.resolve();
            if (cmd.dry_run) {
                std::cout << cfg.dump(2) << '\n';
                return 0;
            }
            if (cmd.threads > 0) {
                omp_set_num_threads(cmd.threads);
            }
            RunDir run(cmd, cfg);
            const int rc = e.run(cmd, cfg, run);
            run.finish();
            std::cerr << "outputs in " << run.path().string() << '\n';
            return rc;
        } catch (const ConfigError& err) {
            std::cerr << "error: " << err.what() << '\n';
            if (err.show_usage()) {
                std::cerr << cmd.app()->help();
            }
            return 2;
        } catch (const std::invalid_argument& err) {
            std::cerr << "error: " << err.what() << '\n';
            return 2;
        } catch (const std::exception& err) {
            std::cerr << "error: " << err.what() << '\n';
            return 1;
        }
    }
    return 2;
}
