#pragma once

// Closed-form scaling predictions for Zipf frequencies p_i ~ i^-(1+alpha) and
// per-feature loss L(n) ~ n^-beta, and log-log fitting to check them.

#include <cstddef>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "saelab/allocation.hpp"

namespace saelab::theory {

enum class Regime { Pathological, Benign, Critical };

std::string to_string(Regime r);

/// Exponents are positive magnitudes: loss ~ N^-loss_exponent,
/// discovered features ~ N^discovery_exponent.
struct RegimePrediction {
    double alpha = 0.0;
    double beta = 0.0;
    double gamma = 0.0;  // (1 + alpha) / (1 + beta), allocation n_i ~ i^-gamma
    Regime regime = Regime::Critical;
    double loss_exponent = 0.0;
    double discovery_exponent = 0.0;
    // alpha == beta: shared exponent used, logarithmic corrections ignored.
    bool degenerate = false;

    nlohmann::json to_json() const;
};

RegimePrediction predict(double alpha, double beta);

struct Point {
    double x = 0.0;
    double y = 0.0;
};

/// Inclusive x-range.
struct FitWindow {
    double lo = 0.0;
    double hi = std::numeric_limits<double>::infinity();
};

/// log y = intercept + slope * log x (natural logs).
struct PowerLawFit {
    double slope = 0.0;
    double intercept = 0.0;
    double x_lo = 0.0;
    double x_hi = 0.0;
    double residual_rms = 0.0;
    std::size_t points = 0;

    nlohmann::json to_json() const;
};

/// Ordinary least squares on (log x, log y) for points with x inside `window`.
PowerLawFit fit_power_law(std::span<const Point> points, FitWindow window = {});

/// [x_max / 10, x_max]: the last decade of the data.
FitWindow last_decade(std::span<const Point> points);

struct RegimeTolerances {
    double loss = 0.05;
    double discovery = 0.05;
};

struct RegimeCheck {
    std::string quantity;
    double predicted = 0.0;
    double measured = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

struct RegimeReport {
    RegimePrediction prediction;
    FitWindow window;
    PowerLawFit loss_fit;
    PowerLawFit discovery_fit;
    std::vector<RegimeCheck> checks;

    bool pass() const;
    nlohmann::json to_json() const;
};

/// Fits loss and discovery exponents over the final decade of `rows`
/// (unless `window` is given) and compares them with `prediction`.
RegimeReport verify_regime(std::span<const allocation::ScalingRow> rows,
                           const RegimePrediction& prediction, RegimeTolerances tolerances,
                           const FitWindow* window = nullptr);

/// Columns: quantity, predicted, measured, tolerance, pass.
void print_regime_table(std::ostream& out, const RegimeReport& report);

}  // namespace saelab::theory
