#include <cmath>
#include <numbers>
#include <stdexcept>

#include "saelab/experiments.hpp"

namespace saelab::experiments {

ArcReport analyze_arcs(const sae::SaeModel& model, std::size_t grid) {
    if (model.dim() != 2) {
        throw std::invalid_argument("arc analysis needs a model on R^2");
    }
    if (grid < 3) {
        throw std::invalid_argument("arc analysis needs at least 3 grid angles");
    }
    const std::size_t n = model.latents();
    const double step = 2.0 * std::numbers::pi / static_cast<double>(grid);

    ArcReport rep;
    rep.latents = n;
    rep.grid = grid;
    rep.trace.resize(grid);
    std::vector<std::vector<std::uint8_t>> fires(n, std::vector<std::uint8_t>(grid, 0));
    for (std::size_t g = 0; g < grid; ++g) {
        const double t = step * static_cast<double>(g);
        const double x[2] = {std::cos(t), std::sin(t)};
        const auto f = model.encode(x);
        const auto xh = model.decode(f);
        rep.trace[g] = {xh[0], xh[1]};
        for (std::size_t j = 0; j < n; ++j) {
            fires[j][g] = f[j] > kFireThreshold;
        }
    }

    double width_sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        const auto& on = fires[j];
        LatentArc arc;
        arc.latent = j;
        const auto w = model.decoder_column(j);
        arc.decoder_x = w[0];
        arc.decoder_y = w[1];
        std::size_t count = 0;
        std::size_t first_start = grid;
        for (std::size_t g = 0; g < grid; ++g) {
            count += on[g];
            const bool starts = on[g] && !on[(g + grid - 1) % grid];
            if (starts) {
                ++arc.runs;
                if (first_start == grid) {
                    first_start = g;
                }
            }
        }
        arc.live = count > 0;
        arc.full = count == grid;
        if (arc.full) {
            arc.runs = 1;
            arc.start = 0.0;
            arc.end = step * static_cast<double>(grid - 1);
        } else if (arc.live) {
            std::size_t g = first_start;
            while (on[(g + 1) % grid]) {
                g = (g + 1) % grid;
            }
            arc.start = step * static_cast<double>(first_start);
            arc.end = step * static_cast<double>(g);
        }
        arc.width = step * static_cast<double>(count);
        if (arc.live) {
            ++rep.live;
            rep.contiguous += arc.contiguous();
            width_sum += arc.width;
        }
        rep.arcs.push_back(arc);
    }
    rep.mean_width = rep.live > 0 ? width_sum / static_cast<double>(rep.live) : 0.0;
    return rep;
}

nlohmann::json ArcReport::to_json() const {
    nlohmann::json arcs_j = nlohmann::json::array();
    for (const auto& a : arcs) {
        arcs_j.push_back({{"latent", a.latent},
                          {"live", a.live},
                          {"full", a.full},
                          {"runs", a.runs},
                          {"contiguous", a.contiguous()},
                          {"start", a.start},
                          {"end", a.end},
                          {"width", a.width},
                          {"decoder", {a.decoder_x, a.decoder_y}}});
    }
    nlohmann::json trace_j = nlohmann::json::array();
    for (const auto& [x, y] : trace) {
        trace_j.push_back({x, y});
    }
    return {{"latents", latents},
            {"grid", grid},
            {"live", live},
            {"contiguous", contiguous},
            {"contiguous_fraction", contiguous_fraction()},
            {"mean_width", mean_width},
            {"loss", {{"mean", loss.loss}, {"std_error", loss.std_error}}},
            {"arcs", arcs_j},
            {"trace", trace_j}};
}

TilingResult circle_tiling(std::size_t n, const SweepOptions& options, std::size_t grid) {
    manifolds::ManifoldSpec spec;
    spec.kind = manifolds::Circle{};
    SweepOptions opts = options;
    opts.latents = {n};
    TilingResult out{sweep_Ln(spec, opts), {}};
    out.arcs = analyze_arcs(out.sweep.best_models.front(), grid);
    out.arcs.loss.loss = out.sweep.best.front().loss;
    out.arcs.loss.std_error = out.sweep.best.front().std_error;
    out.arcs.loss.samples = opts.config.eval_samples;
    return out;
}

}  // namespace saelab::experiments
