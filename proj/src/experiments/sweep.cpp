#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "saelab/experiments.hpp"
#include "saelab/rng.hpp"

namespace saelab::experiments {

std::vector<std::size_t> log2_grid(std::size_t lo, std::size_t hi) {
    if (lo == 0 || hi < lo) {
        throw std::invalid_argument("latent grid needs 0 < lo <= hi");
    }
    std::vector<std::size_t> out;
    for (std::size_t n = lo; n <= hi; n *= 2) {
        out.push_back(n);
    }
    return out;
}

namespace {

std::size_t parse_count(const std::string& s, const std::string& whole) {
    std::size_t pos = 0;
    long long v = 0;
    try {
        v = std::stoll(s, &pos);
    } catch (const std::exception&) {
        pos = std::string::npos;
    }
    if (pos != s.size() || v <= 0) {
        throw std::invalid_argument("bad latent grid '" + whole + "': '" + s +
                                    "' is not a positive integer");
    }
    return static_cast<std::size_t>(v);
}

}  // namespace

std::vector<std::size_t> parse_latent_grid(const std::string& text) {
    std::vector<std::string> parts;
    const char sep = text.find(':') != std::string::npos ? ':' : ',';
    std::stringstream ss(text);
    for (std::string item; std::getline(ss, item, sep);) {
        parts.push_back(item);
    }
    std::vector<std::size_t> out;
    if (sep == ':') {
        if (parts.size() < 2 || parts.size() > 3 || (parts.size() == 3 && parts[2] != "log")) {
            throw std::invalid_argument("bad latent grid '" + text +
                                        "': expected lo:hi or lo:hi:log");
        }
        const std::size_t lo = parse_count(parts[0], text);
        const std::size_t hi = parse_count(parts[1], text);
        if (hi < lo) {
            throw std::invalid_argument("bad latent grid '" + text + "': hi < lo");
        }
        if (parts.size() == 3) {
            return log2_grid(lo, hi);
        }
        for (std::size_t n = lo; n <= hi; ++n) {
            out.push_back(n);
        }
        return out;
    }
    for (const auto& p : parts) {
        out.push_back(parse_count(p, text));
    }
    if (!std::is_sorted(out.begin(), out.end()) ||
        std::adjacent_find(out.begin(), out.end()) != out.end()) {
        throw std::invalid_argument("bad latent grid '" + text + "': counts must be ascending");
    }
    return out;
}

std::vector<std::size_t> activation_counts(const sae::SaeModel& model,
                                           const manifolds::ManifoldSpec& spec, std::uint64_t seed,
                                           std::size_t samples) {
    constexpr std::size_t chunk = 4096;
    const std::size_t n = model.latents();
    const std::size_t d = model.dim();
    manifolds::Sampler sampler(spec, seed);
    std::vector<double> batch(chunk * d);
    std::vector<std::size_t> counts(n, 0);
    const auto be = model.encoder_bias();
    const auto theta = model.thresholds();
    const bool jump = model.nonlinearity() == sae::Nonlinearity::JumpReLU;
    for (std::size_t start = 0; start < samples; start += chunk) {
        const std::size_t rows = std::min(chunk, samples - start);
        sampler.fill(batch, rows);
        for (std::size_t j = 0; j < n; ++j) {
            const auto w = model.encoder_row(j);
            const double cut = jump ? std::max(theta[j], kFireThreshold) : kFireThreshold;
            std::size_t c = 0;
            for (std::size_t s = 0; s < rows; ++s) {
                double z = be[j];
                for (std::size_t k = 0; k < d; ++k) {
                    z += w[k] * batch[s * d + k];
                }
                c += z > cut;
            }
            counts[j] += c;
        }
    }
    return counts;
}

std::uint64_t run_seed(const sae::TrainConfig& config, std::size_t seed_index) {
    return config.seed + seed_index;
}

namespace {

struct RunOutput {
    SweepRow row;
    std::optional<sae::TrainResult> result;
};

}  // namespace

SweepResult sweep_Ln(const manifolds::ManifoldSpec& spec, const SweepOptions& options) {
    if (options.latents.empty()) {
        throw std::invalid_argument("sweep: no latent counts given");
    }
    for (std::size_t i = 0; i < options.latents.size(); ++i) {
        if (options.latents[i] == 0 || (i > 0 && options.latents[i] <= options.latents[i - 1])) {
            throw std::invalid_argument("sweep: latent counts must be positive and ascending");
        }
    }
    if (options.seeds == 0) {
        throw std::invalid_argument("sweep: need at least one seed");
    }
    options.config.validate();
    manifolds::validate(spec);

    SweepResult out;
    out.spec = spec;
    out.config = options.config;
    out.seeds = options.seeds;
    out.window = options.window;
    out.eval_seed = options.config.eval_seed.value_or(derive_seed(options.config.seed, 3));
    out.config_hash = io::config_hash({{"spec", spec.to_json()},
                                       {"config", options.config.to_json()},
                                       {"seeds", options.seeds},
                                       {"latents", options.latents}});

    const std::size_t grid = options.latents.size();
    const std::size_t tasks = grid * options.seeds;
    std::vector<RunOutput> runs(tasks);
    // Largest models first so the pool drains evenly.
    std::vector<std::size_t> order(tasks);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return options.latents[a / options.seeds] > options.latents[b / options.seeds];
    });

    const int workers = options.threads > 0 ? static_cast<int>(options.threads)
                                            : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic, 1) num_threads(workers) if (workers > 1)
    for (std::size_t t = 0; t < tasks; ++t) {
        const std::size_t task = order[t];
        const std::size_t n = options.latents[task / options.seeds];
        const std::size_t k = task % options.seeds;
        RunOutput& r = runs[task];
        r.row.n = n;
        r.row.seed_index = k;
        r.row.seed = run_seed(options.config, k);
        sae::TrainConfig cfg = options.config;
        cfg.seed = r.row.seed;
        cfg.eval_seed = out.eval_seed;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            r.result = sae::train(spec, n, cfg);
            r.row.final_loss = r.result->final_loss.loss;
            r.row.std_error = r.result->final_loss.std_error;
            const auto counts = activation_counts(r.result->model, spec,
                                                  derive_seed(out.eval_seed, 7),
                                                  options.dead_samples);
            r.row.dead_latents = static_cast<std::size_t>(
                std::count(counts.begin(), counts.end(), std::size_t{0}));
        } catch (const sae::DivergenceError& e) {
            r.row.diverged = true;
            r.row.error = e.what();
            r.row.final_loss = std::numeric_limits<double>::quiet_NaN();
        }
        r.row.wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count();
    }

    for (std::size_t i = 0; i < grid; ++i) {
        std::optional<std::size_t> best;
        for (std::size_t k = 0; k < options.seeds; ++k) {
            const std::size_t task = i * options.seeds + k;
            out.rows.push_back(runs[task].row);
            if (runs[task].row.diverged) {
                continue;
            }
            if (!best || runs[task].row.final_loss < runs[*best].row.final_loss) {
                best = task;
            }
        }
        if (!best) {
            throw std::runtime_error("sweep: every seed diverged at n = " +
                                     std::to_string(options.latents[i]));
        }
        RunOutput& b = runs[*best];
        out.best.push_back({b.row.n, b.row.seed, b.row.final_loss, b.row.std_error});
        out.best_models.push_back(std::move(b.result->model));
        out.best_histories.push_back(std::move(b.result->history));
        for (std::size_t k = 0; k < options.seeds; ++k) {
            runs[i * options.seeds + k].result.reset();
        }
    }

    for (std::size_t i = 1; i < out.best.size(); ++i) {
        const auto& a = out.best[i - 1];
        const auto& b = out.best[i];
        const double band = 2.0 * std::max(a.std_error, b.std_error);
        if (b.loss > a.loss + band) {
            out.violations.push_back({a.n, b.n, a.loss, b.loss, band});
        }
    }

    std::vector<theory::Point> points;
    for (const auto& b : out.best) {
        points.push_back({static_cast<double>(b.n), b.loss});
    }
    try {
        out.fit = theory::fit_power_law(points, options.window);
    } catch (const std::invalid_argument& e) {
        out.fit_error = e.what();
    }
    return out;
}

namespace {

nlohmann::json number_or_null(double v) {
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

}  // namespace

nlohmann::json SweepResult::to_json() const {
    nlohmann::json rows_j = nlohmann::json::array();
    for (const auto& r : rows) {
        nlohmann::json j{{"n", r.n},
                         {"seed", r.seed},
                         {"seed_index", r.seed_index},
                         {"diverged", r.diverged},
                         {"final_loss", number_or_null(r.final_loss)},
                         {"std_error", r.std_error},
                         {"dead_latents", r.dead_latents}};
        if (r.diverged) {
            j["error"] = r.error;
        }
        rows_j.push_back(std::move(j));
    }
    nlohmann::json best_j = nlohmann::json::array();
    for (const auto& b : best) {
        best_j.push_back(
            {{"n", b.n}, {"seed", b.seed}, {"loss", b.loss}, {"std_error", b.std_error}});
    }
    nlohmann::json viol = nlohmann::json::array();
    for (const auto& v : violations) {
        viol.push_back({{"n_prev", v.n_prev},
                        {"n", v.n},
                        {"loss_prev", v.loss_prev},
                        {"loss", v.loss},
                        {"band", v.band}});
    }
    nlohmann::json j{{"spec", spec.to_json()},
                     {"config", config.to_json()},
                     {"config_hash", config_hash},
                     {"seeds", seeds},
                     {"aggregation", "best final loss over seeds"},
                     {"eval_seed", eval_seed},
                     {"rows", rows_j},
                     {"best", best_j},
                     {"window", {{"lo", window.lo}, {"hi", number_or_null(window.hi)}}},
                     {"monotonicity_violations", viol}};
    if (fit) {
        j["fit"] = fit->to_json();
    } else {
        j["fit"] = nullptr;
        j["fit_error"] = fit_error;
    }
    return j;
}

void write_sweep_csv(std::ostream& out, const SweepResult& result, bool include_wall_time) {
    out << "n,seed,final_loss,dead_latents,wall_ms\n";
    for (const auto& r : result.rows) {
        out << r.n << ',' << r.seed << ','
            << (r.diverged ? std::string("nan") : io::format_double(r.final_loss)) << ','
            << r.dead_latents << ',';
        if (include_wall_time) {
            out << io::format_double(std::round(r.wall_ms * 1000.0) / 1000.0);
        }
        out << '\n';
    }
}

}  // namespace saelab::experiments
