#pragma once

// Latent allocation: choose n_i >= 0 with sum n_i = N minimising sum p_i L_i(n_i).

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include <json.hpp>

namespace saelab::allocation {

/// Per-feature loss as a function of the number of latents assigned to it.
///
/// All three kinds are non-increasing with non-increasing marginal gains,
/// which is what makes the greedy solver exact.
///   Step:      L(0) = unsatisfied, L(n >= 1) = satisfied.
///   PowerLaw:  L(n) = floor + n^-beta for n >= 1, L(0) = 2 L(1) - L(2).
///   Tabulated: L(n) = values[min(n, size - 1)].
class LossCurve {
public:
    enum class Kind { Step, PowerLaw, Tabulated };

    static LossCurve step(double satisfied_loss, double unsatisfied_loss = 1.0);
    static LossCurve power_law(double beta, double floor = 0.0);
    static LossCurve tabulated(std::vector<double> values);

    Kind kind() const noexcept { return kind_; }

    double operator()(std::int64_t n) const;
    /// Piecewise-linear between n = 0 and n = 1, the natural curve above 1.
    double at(double n) const;
    /// L(n) - L(n + 1).
    double gain(std::int64_t n) const { return (*this)(n) - (*this)(n + 1); }

    double satisfied_loss() const noexcept { return a_; }
    double unsatisfied_loss() const noexcept { return b_; }
    double beta() const noexcept { return a_; }
    double floor() const noexcept { return b_; }
    const std::vector<double>& values() const noexcept { return values_; }

    bool operator==(const LossCurve&) const = default;

    nlohmann::json to_json() const;
    static LossCurve from_json(const nlohmann::json& j);

private:
    LossCurve(Kind kind, double a, double b, std::vector<double> values)
        : kind_{kind}, a_{a}, b_{b}, values_{std::move(values)} {}

    Kind kind_;
    // Step: (satisfied, unsatisfied). PowerLaw: (beta, floor).
    double a_;
    double b_;
    std::vector<double> values_;
};

/// A run of consecutive features [first, first + count) sharing curve `curve`.
struct CurveSegment {
    std::size_t first = 0;
    std::size_t count = 0;
    std::size_t curve = 0;

    bool operator==(const CurveSegment&) const = default;
};

/// Features indexed by frequency rank (index 0 = most frequent).
class FeatureEnsemble {
public:
    FeatureEnsemble(std::vector<double> frequencies,
                    std::vector<LossCurve> curves,
                    std::vector<CurveSegment> segments,
                    bool normalized = false);

    /// p_i proportional to i^-(1+alpha), i = 1..count, all with the same curve.
    static FeatureEnsemble zipf(double alpha, std::size_t count, const LossCurve& curve,
                                bool normalize = false);
    /// Zipf frequencies; the first head.size() features get their own curves,
    /// the remainder share `tail`.
    static FeatureEnsemble zipf_with_head(double alpha, std::size_t count,
                                          const std::vector<LossCurve>& head,
                                          const LossCurve& tail, bool normalize = false);

    std::size_t size() const noexcept { return frequencies_.size(); }
    double frequency(std::size_t i) const { return frequencies_[i]; }
    const LossCurve& curve(std::size_t i) const;
    std::span<const double> frequencies() const noexcept { return frequencies_; }
    const std::vector<LossCurve>& curves() const noexcept { return curves_; }
    const std::vector<CurveSegment>& segments() const noexcept { return segments_; }
    bool normalized() const noexcept { return normalized_; }
    /// True when every feature uses the same curve.
    bool uniform_curve() const noexcept { return curves_.size() == 1; }

    nlohmann::json to_json() const;
    static FeatureEnsemble from_json(const nlohmann::json& j);

private:
    std::vector<double> frequencies_;
    std::vector<LossCurve> curves_;
    std::vector<CurveSegment> segments_;
    bool normalized_;
};

struct Allocation {
    std::vector<std::int64_t> counts;
    std::int64_t total_latents = 0;
    double expected_loss = 0.0;
    std::size_t discovered = 0;

    nlohmann::json to_json() const;
};

struct ContinuousAllocation {
    std::vector<double> counts;
    double total_latents = 0.0;
    double expected_loss = 0.0;
    std::size_t discovered = 0;
    double kappa = 0.0;
    std::size_t cutoff_iterations = 0;

    nlohmann::json to_json() const;
};

/// sum_i p_i L_i(counts[i]), compensated summation in index order.
double expected_loss(const FeatureEnsemble& ensemble, std::span<const std::int64_t> counts);
double expected_loss(const FeatureEnsemble& ensemble, std::span<const double> counts);

/// Incremental largest-marginal-gain-first allocator. Ties go to the lower
/// feature index. Budgets may only grow.
class GreedyAllocator {
public:
    explicit GreedyAllocator(const FeatureEnsemble& ensemble);

    void advance_to(std::int64_t budget);

    std::int64_t budget() const noexcept { return budget_; }
    std::size_t discovered() const noexcept { return discovered_; }
    std::span<const std::int64_t> counts() const noexcept { return counts_; }
    Allocation snapshot() const;

private:
    struct Entry {
        double gain;
        std::size_t feature;
    };
    void push(std::size_t feature);
    static bool lower_priority(const Entry& a, const Entry& b);

    const FeatureEnsemble* ensemble_;
    std::vector<std::int64_t> counts_;
    std::vector<Entry> heap_;
    // Next never-allocated feature of each segment.
    std::vector<std::size_t> frontier_;
    std::int64_t budget_ = 0;
    std::size_t discovered_ = 0;
};

Allocation greedy_allocate(const FeatureEnsemble& ensemble, std::int64_t budget);

/// Lagrange relaxation for a uniform PowerLaw ensemble: n_i = kappa p_i^(1/(1+beta)),
/// with features whose share would fall below one latent cut to zero and kappa
/// re-solved until the discovered set stops shrinking.
ContinuousAllocation continuous_allocate(const FeatureEnsemble& ensemble, double budget);

struct ScalingRow {
    std::int64_t budget = 0;
    double expected_loss = 0.0;
    std::size_t discovered = 0;
    double frac_latents_feature_1 = 0.0;
    std::vector<std::int64_t> flagged_counts;
};

/// One greedy pass shared across ascending budgets.
std::vector<ScalingRow> simulate_scaling(const FeatureEnsemble& ensemble,
                                         std::span<const std::int64_t> budgets,
                                         std::span<const std::size_t> flagged = {});

/// Header: N,expected_loss,discovered,frac_latents_feature_1
void write_scaling_csv(std::ostream& out, std::span<const ScalingRow> rows);
nlohmann::json scaling_to_json(std::span<const ScalingRow> rows,
                               std::span<const std::size_t> flagged);

/// Integer budgets spaced evenly in log10 from lo to hi (inclusive, deduplicated).
std::vector<std::int64_t> log_budgets(std::int64_t lo, std::int64_t hi, int per_decade);

}  // namespace saelab::allocation
