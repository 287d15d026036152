#pragma once

// Sparse autoencoder: f = sigma(W_e x + b_e), x_hat = W_d f + b_d, trained on
// ||x - x_hat||^2 + sparsity(f) with Adam on freshly streamed samples.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "saelab/manifolds.hpp"

namespace saelab::sae {

enum class Nonlinearity { ReLU, JumpReLU };

std::string to_string(Nonlinearity n);
Nonlinearity nonlinearity_from_string(const std::string& s);

/// lambda * sum_j f_j ||w_j||  (decoder-norm weighted L1)
struct L1Penalty {
    double lambda = 0.1;
};

/// lambda_s * sum_j tanh(c * f_j ||w_j||)
struct TanhPenalty {
    double c = 0.1;
    double lambda_s = 1.0;
};

using Sparsity = std::variant<L1Penalty, TanhPenalty>;

nlohmann::json sparsity_to_json(const Sparsity& s);
Sparsity sparsity_from_json(const nlohmann::json& j);

/// Offsets of each parameter block inside the flat parameter vector:
/// W_e (latents x dim, row-major) | b_e | W_d (stored latent-major: row j is
/// decoder column w_j) | b_d | theta (JumpReLU only).
struct Layout {
    std::size_t latents = 0;
    std::size_t dim = 0;
    bool thresholds = false;

    std::size_t encoder() const noexcept { return 0; }
    std::size_t encoder_bias() const noexcept { return latents * dim; }
    std::size_t decoder() const noexcept { return latents * dim + latents; }
    std::size_t decoder_bias() const noexcept { return 2 * latents * dim + latents; }
    std::size_t threshold() const noexcept { return 2 * latents * dim + latents + dim; }
    std::size_t size() const noexcept { return threshold() + (thresholds ? latents : 0); }
    bool operator==(const Layout&) const = default;
};

class SaeModel {
public:
    SaeModel(std::size_t latents, std::size_t dim, Nonlinearity nonlinearity = Nonlinearity::ReLU);

    /// Encoder rows uniform on the unit sphere times `scale`, decoder = encoder^T,
    /// zero biases, thresholds at `threshold_init`.
    static SaeModel initialized(std::size_t latents, std::size_t dim, Nonlinearity nonlinearity,
                                std::uint64_t seed, double scale = 0.1,
                                double threshold_init = 0.001);

    std::size_t latents() const noexcept { return layout_.latents; }
    std::size_t dim() const noexcept { return layout_.dim; }
    Nonlinearity nonlinearity() const noexcept { return nonlinearity_; }
    const Layout& layout() const noexcept { return layout_; }

    std::span<double> parameters() noexcept { return params_; }
    std::span<const double> parameters() const noexcept { return params_; }

    std::span<const double> encoder_row(std::size_t j) const;
    std::span<const double> decoder_column(std::size_t j) const;
    std::span<double> encoder_row(std::size_t j);
    std::span<double> decoder_column(std::size_t j);
    std::span<const double> encoder_bias() const;
    std::span<const double> decoder_bias() const;
    std::span<const double> thresholds() const;
    std::span<double> encoder_bias();
    std::span<double> decoder_bias();
    std::span<double> thresholds();

    /// Straight-through rectangle width for JumpReLU thresholds.
    double bandwidth = 0.001;

    /// Latent activations for one input.
    std::vector<double> encode(std::span<const double> x) const;
    std::vector<double> decode(std::span<const double> f) const;

    /// Throws std::invalid_argument on shape mismatch or non-finite parameters.
    void validate() const;

    bool operator==(const SaeModel&) const = default;

private:
    Layout layout_;
    Nonlinearity nonlinearity_;
    std::vector<double> params_;
};

/// Batch means of the per-sample loss terms.
struct BatchLoss {
    double total = 0.0;
    double recon = 0.0;
    double sparsity = 0.0;
    // Activation statistics: number of (sample, latent) pairs with f != 0 and
    // the sum of their f^2.
    std::size_t active = 0;
    double active_sq_sum = 0.0;
};

namespace kernels {

/// Serial reference: one sample at a time, gradients accumulated directly.
/// `grad` is either empty (loss only) or layout().size() long and is overwritten.
/// `per_sample` is either empty or `rows` long (per-sample total loss).
BatchLoss evaluate_serial(const SaeModel& model, std::span<const double> batch, std::size_t rows,
                          const Sparsity& sparsity, std::span<double> grad = {},
                          std::span<double> per_sample = {});

/// OpenMP version. The batch is split into fixed 128-row chunks whose partial
/// sums are combined in chunk order, so results are bitwise independent of the
/// thread count.
BatchLoss evaluate_parallel(const SaeModel& model, std::span<const double> batch, std::size_t rows,
                            const Sparsity& sparsity, std::span<double> grad = {},
                            std::span<double> per_sample = {});

inline constexpr std::size_t kChunkRows = 128;

}  // namespace kernels

/// Mean loss over the batch (rows of `batch`, row-major, model.dim() wide).
BatchLoss loss(const SaeModel& model, std::span<const double> batch, std::size_t rows,
               const Sparsity& sparsity);
/// Gradient of BatchLoss::total w.r.t. every parameter (JumpReLU thresholds get
/// the rectangle straight-through pseudo-gradient).
std::vector<double> gradients(const SaeModel& model, std::span<const double> batch,
                              std::size_t rows, const Sparsity& sparsity,
                              BatchLoss* loss_out = nullptr);

struct AdamParams {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

class Adam {
public:
    Adam(std::size_t size, double learning_rate, AdamParams params = {});
    void step(std::span<double> params, std::span<const double> grad);
    std::int64_t steps() const noexcept { return t_; }

private:
    double lr_;
    AdamParams p_;
    std::vector<double> m_;
    std::vector<double> v_;
    std::int64_t t_ = 0;
};

struct TrainConfig {
    std::int64_t steps = 12000;
    std::size_t batch_size = 2048;
    double learning_rate = 1e-3;
    AdamParams adam;
    Sparsity sparsity = L1Penalty{0.1};
    Nonlinearity nonlinearity = Nonlinearity::ReLU;
    std::uint64_t seed = 0;
    /// Held-out evaluation stream; defaults to a stream derived from `seed`.
    std::optional<std::uint64_t> eval_seed;
    std::size_t eval_samples = std::size_t{1} << 15;
    std::int64_t log_every = 100;
    double init_scale = 0.1;
    double threshold_init = 0.001;
    /// JumpReLU bandwidth = factor * running RMS of non-zero activations.
    double bandwidth_factor = 0.001;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

/// Means over the `log_every` steps ending at `step`.
struct HistoryRow {
    std::int64_t step = 0;
    double total = 0.0;
    double recon = 0.0;
    double sparsity = 0.0;
};

struct Evaluation {
    double loss = 0.0;
    double std_error = 0.0;
    double recon = 0.0;
    double sparsity = 0.0;
    std::size_t samples = 0;
};

struct TrainResult {
    SaeModel model;
    std::vector<HistoryRow> history;
    Evaluation final_loss;
};

class DivergenceError : public std::runtime_error {
public:
    DivergenceError(std::int64_t step, const std::string& what)
        : std::runtime_error(what), step_{step} {}
    std::int64_t step() const noexcept { return step_; }

private:
    std::int64_t step_;
};

/// Loss of `model` on `samples` fresh draws from `spec` seeded by `seed`,
/// with the standard error of the mean.
Evaluation evaluate(const SaeModel& model, const manifolds::ManifoldSpec& spec,
                    const Sparsity& sparsity, std::uint64_t seed, std::size_t samples);

TrainResult train(const manifolds::ManifoldSpec& spec, std::size_t latents,
                  const TrainConfig& config);

/// Header: step,total,recon,sparsity
void write_history_csv(std::ostream& out, std::span<const HistoryRow> history);

/// Flat little-endian float64 parameters plus a sidecar with dims,
/// nonlinearity, bandwidth, layout and config hash.
void save_checkpoint(const std::filesystem::path& path, const SaeModel& model,
                     const nlohmann::json& config = {});
SaeModel load_checkpoint(const std::filesystem::path& path, nlohmann::json* sidecar = nullptr);

/// Decoder as a dim x latents matrix (column j = w_j).
io::Matrix decoder_matrix(const SaeModel& model);

}  // namespace saelab::sae
