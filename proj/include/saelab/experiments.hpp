#pragma once

// Experiment drivers built on the trainer: L(n) sweeps, circle arc analysis,
// loss additivity on composites and decoder nearest-neighbour geometry.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "saelab/io.hpp"
#include "saelab/manifolds.hpp"
#include "saelab/sae.hpp"
#include "saelab/theory.hpp"

namespace saelab::experiments {

/// A latent "fires" when its activation exceeds this.
inline constexpr double kFireThreshold = 1e-6;

/// Latent counts lo, 2lo, 4lo, ... up to hi (hi included when it is on the grid).
std::vector<std::size_t> log2_grid(std::size_t lo, std::size_t hi);

/// Parses "a:b:log" (powers-of-two grid), "a:b" (every integer) or "a,b,c".
std::vector<std::size_t> parse_latent_grid(const std::string& text);

/// Per-latent number of samples (out of `samples`) on which it fires.
std::vector<std::size_t> activation_counts(const sae::SaeModel& model,
                                           const manifolds::ManifoldSpec& spec, std::uint64_t seed,
                                           std::size_t samples);

struct SweepOptions {
    std::vector<std::size_t> latents;
    std::size_t seeds = 3;
    sae::TrainConfig config;
    theory::FitWindow window{100.0, 1000.0};
    /// Worker threads for (n, seed) runs; 0 uses the OpenMP default.
    std::size_t threads = 0;
    std::size_t dead_samples = std::size_t{1} << 16;
};

struct SweepRow {
    std::size_t n = 0;
    std::size_t seed_index = 0;
    std::uint64_t seed = 0;
    bool diverged = false;
    std::string error;
    double final_loss = 0.0;
    double std_error = 0.0;
    std::size_t dead_latents = 0;
    double wall_ms = 0.0;
};

struct BestPoint {
    std::size_t n = 0;
    std::uint64_t seed = 0;
    double loss = 0.0;
    double std_error = 0.0;
};

/// Best loss rising from one grid point to the next by more than `band`.
struct MonotonicityViolation {
    std::size_t n_prev = 0;
    std::size_t n = 0;
    double loss_prev = 0.0;
    double loss = 0.0;
    double band = 0.0;
};

struct SweepResult {
    manifolds::ManifoldSpec spec;
    sae::TrainConfig config;
    std::string config_hash;
    std::size_t seeds = 0;
    std::uint64_t eval_seed = 0;
    /// Ordered by (n, seed_index).
    std::vector<SweepRow> rows;
    std::vector<BestPoint> best;
    /// Trained model and training history behind each best point.
    std::vector<sae::SaeModel> best_models;
    std::vector<std::vector<sae::HistoryRow>> best_histories;
    theory::FitWindow window;
    std::optional<theory::PowerLawFit> fit;
    std::string fit_error;
    std::vector<MonotonicityViolation> violations;

    nlohmann::json to_json() const;
};

/// Seed used for run `seed_index`: config.seed + seed_index.
std::uint64_t run_seed(const sae::TrainConfig& config, std::size_t seed_index);

/// Trains one SAE per (n, seed), all evaluated on one shared held-out stream,
/// and keeps the best final loss per n. Diverged runs are recorded and
/// skipped; throws std::runtime_error if every seed of some n diverges.
SweepResult sweep_Ln(const manifolds::ManifoldSpec& spec, const SweepOptions& options);

/// Header: n,seed,final_loss,dead_latents,wall_ms
void write_sweep_csv(std::ostream& out, const SweepResult& result, bool include_wall_time = true);

struct LatentArc {
    std::size_t latent = 0;
    bool live = false;
    bool full = false;
    /// Number of maximal circular runs of firing grid points.
    std::size_t runs = 0;
    double start = 0.0;  // radians, first firing grid angle of the first run
    double end = 0.0;    // radians, last firing grid angle of that run
    double width = 0.0;  // fraction of the grid that fires, times 2 pi
    double decoder_x = 0.0;
    double decoder_y = 0.0;

    bool contiguous() const noexcept { return runs == 1; }
};

struct ArcReport {
    std::size_t latents = 0;
    std::size_t grid = 0;
    std::vector<LatentArc> arcs;
    /// Reconstruction of (cos t, sin t) for every grid angle t.
    std::vector<std::pair<double, double>> trace;
    std::size_t live = 0;
    std::size_t contiguous = 0;
    double mean_width = 0.0;
    sae::Evaluation loss;

    double contiguous_fraction() const noexcept {
        return live == 0 ? 1.0 : static_cast<double>(contiguous) / static_cast<double>(live);
    }
    nlohmann::json to_json() const;
};

/// Activation arcs of a circle SAE over `grid` equally spaced angles.
ArcReport analyze_arcs(const sae::SaeModel& model, std::size_t grid = 4096);

struct TilingResult {
    SweepResult sweep;
    ArcReport arcs;
};

/// Best-of-`seeds` circle SAE with n latents and its arc analysis.
TilingResult circle_tiling(std::size_t n, const SweepOptions& options, std::size_t grid = 4096);

struct AdditivityOptions {
    std::size_t n1 = 8;
    std::size_t n2 = 8;
    std::size_t seeds = 1;
    sae::TrainConfig config;
    std::size_t threads = 0;
};

struct AdditivityReport {
    double p1 = 0.0;
    double p2 = 0.0;
    std::size_t n1 = 0;
    std::size_t n2 = 0;
    sae::Evaluation joint;
    sae::Evaluation single1;
    sae::Evaluation single2;
    double predicted = 0.0;
    double relative_gap = 0.0;
    /// Loss of the all-zero model on the composite and its Pythagorean
    /// prediction sum_i p_i E||x_i||^2.
    double zero_loss = 0.0;
    double zero_predicted = 0.0;

    nlohmann::json to_json() const;
};

/// E||x||^2 for one geometry.
double mean_square_norm(const manifolds::Geometry& g);

/// Joint SAE with n1 + n2 latents on a two-feature composite versus separate
/// SAEs on each feature's own manifold.
AdditivityReport additivity_check(const manifolds::ManifoldSpec& composite,
                                  const AdditivityOptions& options);

namespace kernels {

/// For each live row i of `unit` (rows x dim, unit-norm rows), the largest
/// cosine similarity to any other live row and its index (lowest index on
/// ties). Dead rows get similarity NaN and index == rows. Also counts
/// unordered live pairs with similarity > `high`.
struct NearestNeighbors {
    std::vector<double> similarity;
    std::vector<std::size_t> index;
    std::size_t high_pairs = 0;
};

NearestNeighbors nn_cosine_serial(const io::Matrix& unit, std::span<const std::uint8_t> dead,
                                  double high);
NearestNeighbors nn_cosine_parallel(const io::Matrix& unit, std::span<const std::uint8_t> dead,
                                    double high);

}  // namespace kernels

struct GeometryOptions {
    std::size_t bins = 40;
    double high = 0.97;
};

struct GeometryReport {
    std::size_t latents = 0;
    std::size_t live = 0;
    std::vector<double> similarity;  // NaN for dead latents
    std::vector<std::size_t> neighbor;
    std::vector<std::uint8_t> dead;
    std::vector<double> bin_edges;  // bins + 1 edges over [-1, 1]
    std::vector<std::size_t> histogram;
    /// Live latents whose nearest neighbour exceeds `high`, and such pairs.
    std::size_t high_latents = 0;
    std::size_t high_pairs = 0;
    double median = 0.0;
    double high = 0.97;
    std::vector<double> fire_fraction;  // optional, per latent

    nlohmann::json to_json() const;
};

/// `decoder` is dim x latents (column j = decoder vector of latent j).
/// Zero-norm columns, and latents with zero entries in `fire_counts` when it
/// is given, are dead. Throws std::invalid_argument with fewer than 2 live.
GeometryReport decoder_geometry(const io::Matrix& decoder, const GeometryOptions& options = {},
                                std::span<const std::size_t> fire_counts = {},
                                std::size_t fire_samples = 0);

struct RandomBaseline {
    std::size_t latents = 0;
    std::size_t dim = 0;
    std::size_t resamples = 0;
    /// Median of all nearest-neighbour similarities pooled over resamples.
    double median = 0.0;
    double mean_max = 0.0;
    double max = 0.0;

    nlohmann::json to_json() const;
};

/// Nearest-neighbour statistics of `latents` independent uniform unit vectors
/// in R^dim, over `resamples` draws.
RandomBaseline random_baseline(std::size_t latents, std::size_t dim, std::size_t resamples,
                               std::uint64_t seed);

double median(std::vector<double> values);

namespace svg {

/// Circle with firing arcs and decoder arrows.
std::string circle_diagram(const ArcReport& report);
/// Histogram of nearest-neighbour similarities.
std::string histogram(const GeometryReport& report);
/// Best loss against n on log-log axes, with the fitted line when present.
std::string loss_curve(const SweepResult& result);

}  // namespace svg

}  // namespace saelab::experiments
