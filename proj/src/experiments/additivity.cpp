#include <array>
#include <cmath>
#include <stdexcept>

#include "saelab/experiments.hpp"
#include "saelab/rng.hpp"

namespace saelab::experiments {

double mean_square_norm(const manifolds::Geometry& g) {
    if (const auto* s = std::get_if<manifolds::Shell>(&g)) {
        const double a = s->r_min;
        const double b = s->r_max;
        return (b * b * b - a * a * a) / (3.0 * (b - a));
    }
    return 1.0;
}

namespace {

sae::Evaluation best_run(const manifolds::ManifoldSpec& spec, std::size_t n,
                         const AdditivityOptions& options, std::uint64_t eval_seed) {
    if (n == 0) {
        const sae::SaeModel zero(0, spec.dim(), options.config.nonlinearity);
        return sae::evaluate(zero, spec, options.config.sparsity, eval_seed,
                             options.config.eval_samples);
    }
    SweepOptions sw;
    sw.latents = {n};
    sw.seeds = options.seeds;
    sw.config = options.config;
    sw.config.eval_seed = eval_seed;
    sw.threads = options.threads;
    sw.dead_samples = 0;
    const SweepResult r = sweep_Ln(spec, sw);
    sae::Evaluation e;
    e.loss = r.best.front().loss;
    e.std_error = r.best.front().std_error;
    e.samples = options.config.eval_samples;
    return e;
}

}  // namespace

AdditivityReport additivity_check(const manifolds::ManifoldSpec& composite,
                                  const AdditivityOptions& options) {
    const auto* comp = std::get_if<manifolds::Composite>(&composite.kind);
    if (comp == nullptr || comp->features.size() != 2) {
        throw std::invalid_argument("additivity check needs a composite with exactly two features");
    }
    manifolds::validate(composite);
    options.config.validate();
    const std::uint64_t eval_seed =
        options.config.eval_seed.value_or(derive_seed(options.config.seed, 3));

    AdditivityReport rep;
    rep.p1 = comp->features[0].frequency;
    rep.p2 = comp->features[1].frequency;
    rep.n1 = options.n1;
    rep.n2 = options.n2;

    rep.joint = best_run(composite, options.n1 + options.n2, options, eval_seed);
    std::array<sae::Evaluation*, 2> singles{&rep.single1, &rep.single2};
    for (std::size_t i = 0; i < 2; ++i) {
        manifolds::ManifoldSpec single;
        std::visit([&](const auto& g) { single.kind = g; }, comp->features[i].geometry);
        single.seed = composite.seed;
        *singles[i] = best_run(single, i == 0 ? options.n1 : options.n2, options,
                               derive_seed(eval_seed, 11 + i));
    }
    rep.predicted = rep.p1 * rep.single1.loss + rep.p2 * rep.single2.loss;
    rep.relative_gap = std::abs(rep.joint.loss - rep.predicted) / rep.predicted;

    const sae::SaeModel zero(0, composite.dim(), options.config.nonlinearity);
    rep.zero_loss = sae::evaluate(zero, composite, options.config.sparsity, eval_seed,
                                  options.config.eval_samples)
                        .loss;
    rep.zero_predicted = rep.p1 * mean_square_norm(comp->features[0].geometry) +
                         rep.p2 * mean_square_norm(comp->features[1].geometry);
    return rep;
}

nlohmann::json AdditivityReport::to_json() const {
    const auto eval = [](const sae::Evaluation& e) {
        return nlohmann::json{{"loss", e.loss}, {"std_error", e.std_error}, {"samples", e.samples}};
    };
    return {{"p", {p1, p2}},
            {"n", {n1, n2}},
            {"joint", eval(joint)},
            {"single", {eval(single1), eval(single2)}},
            {"predicted", predicted},
            {"relative_gap", relative_gap},
            {"zero_model", {{"loss", zero_loss}, {"predicted", zero_predicted}}}};
}

}  // namespace saelab::experiments
