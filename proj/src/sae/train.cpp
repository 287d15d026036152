#include <algorithm>
#include <cmath>
#include <string>

#include "saelab/rng.hpp"
#include "saelab/sae.hpp"

namespace saelab::sae {

namespace {

constexpr std::size_t kEvalChunk = 4096;
constexpr double kScaleMomentum = 0.99;

std::uint64_t data_seed(const manifolds::ManifoldSpec& spec, std::uint64_t seed) {
    return derive_seed(seed ^ splitmix64(spec.seed), 2);
}

}  // namespace

Evaluation evaluate(const SaeModel& model, const manifolds::ManifoldSpec& spec,
                    const Sparsity& sparsity, std::uint64_t seed, std::size_t samples) {
    if (samples == 0) {
        throw std::invalid_argument("evaluate: need at least one sample");
    }
    if (spec.dim() != model.dim()) {
        throw std::invalid_argument("evaluate: manifold dimension " + std::to_string(spec.dim()) +
                                    " does not match model input dimension " +
                                    std::to_string(model.dim()));
    }
    manifolds::Sampler sampler(spec, seed);
    const std::size_t d = model.dim();
    std::vector<double> batch(kEvalChunk * d);
    std::vector<double> per_sample(samples);
    double recon = 0.0;
    double sparse = 0.0;
    for (std::size_t start = 0; start < samples; start += kEvalChunk) {
        const std::size_t rows = std::min(kEvalChunk, samples - start);
        sampler.fill(batch, rows);
        const auto l = kernels::evaluate_parallel(
            model, std::span<const double>(batch).first(rows * d), rows, sparsity, {},
            std::span<double>(per_sample).subspan(start, rows));
        recon += l.recon * static_cast<double>(rows);
        sparse += l.sparsity * static_cast<double>(rows);
    }
    const auto count = static_cast<double>(samples);
    double mean = 0.0;
    for (double v : per_sample) {
        mean += v;
    }
    mean /= count;
    double var = 0.0;
    for (double v : per_sample) {
        var += (v - mean) * (v - mean);
    }
    var = samples > 1 ? var / (count - 1.0) : 0.0;

    Evaluation e;
    e.loss = mean;
    e.std_error = std::sqrt(var / count);
    e.recon = recon / count;
    e.sparsity = sparse / count;
    e.samples = samples;
    return e;
}

TrainResult train(const manifolds::ManifoldSpec& spec, std::size_t latents,
                  const TrainConfig& config) {
    config.validate();
    manifolds::validate(spec);
    const std::size_t d = spec.dim();
    SaeModel model = SaeModel::initialized(latents, d, config.nonlinearity,
                                           derive_seed(config.seed, 1), config.init_scale,
                                           config.threshold_init);
    const bool jump = config.nonlinearity == Nonlinearity::JumpReLU;
    manifolds::Sampler sampler(spec, data_seed(spec, config.seed));
    Adam adam(model.layout().size(), config.learning_rate, config.adam);

    std::vector<double> batch(config.batch_size * d);
    std::vector<double> grad(model.layout().size());
    std::vector<HistoryRow> history;
    HistoryRow window;
    std::int64_t in_window = 0;
    double activation_scale = -1.0;

    for (std::int64_t step = 1; step <= config.steps; ++step) {
        sampler.fill(batch, config.batch_size);
        if (jump && activation_scale > 0.0) {
            model.bandwidth = config.bandwidth_factor * activation_scale;
        }
        const BatchLoss l =
            kernels::evaluate_parallel(model, batch, config.batch_size, config.sparsity, grad);
        if (!std::isfinite(l.total)) {
            throw DivergenceError(step, "training diverged at step " + std::to_string(step) +
                                            " (non-finite loss)");
        }
        window.total += l.total;
        window.recon += l.recon;
        window.sparsity += l.sparsity;
        ++in_window;

        adam.step(model.parameters(), grad);

        if (jump) {
            for (auto& t : model.thresholds()) {
                t = std::max(t, 0.0);
            }
            if (l.active > 0) {
                const double rms = std::sqrt(l.active_sq_sum / static_cast<double>(l.active));
                activation_scale = activation_scale < 0.0
                                       ? rms
                                       : kScaleMomentum * activation_scale +
                                             (1.0 - kScaleMomentum) * rms;
            }
        }
        if (step % config.log_every == 0) {
            const auto k = static_cast<double>(in_window);
            history.push_back({step, window.total / k, window.recon / k, window.sparsity / k});
            window = HistoryRow{};
            in_window = 0;
        }
    }
    for (double p : model.parameters()) {
        if (!std::isfinite(p)) {
            throw DivergenceError(config.steps, "training produced non-finite parameters");
        }
    }
    const std::uint64_t eval_seed = config.eval_seed.value_or(derive_seed(config.seed, 3));
    Evaluation final_loss = evaluate(model, spec, config.sparsity, eval_seed, config.eval_samples);
    return TrainResult{std::move(model), std::move(history), final_loss};
}

}  // namespace saelab::sae
