#include "saelab/theory.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

namespace saelab::theory {

std::string to_string(Regime r) {
    switch (r) {
    case Regime::Pathological:
        return "pathological";
    case Regime::Benign:
        return "benign";
    case Regime::Critical:
        return "critical";
    }
    return "unknown";
}

RegimePrediction predict(double alpha, double beta) {
    if (!(std::isfinite(alpha) && alpha > 0.0) || !(std::isfinite(beta) && beta > 0.0)) {
        throw std::invalid_argument("predict: alpha and beta must be finite and > 0");
    }
    RegimePrediction p;
    p.alpha = alpha;
    p.beta = beta;
    p.gamma = (1.0 + alpha) / (1.0 + beta);
    if (std::abs(alpha - beta) < 1e-12) {
        p.regime = Regime::Critical;
        p.loss_exponent = alpha;
        p.discovery_exponent = 1.0;
        p.degenerate = true;
    } else if (beta < alpha) {
        p.regime = Regime::Pathological;
        p.loss_exponent = beta;
        p.discovery_exponent = (1.0 + beta) / (1.0 + alpha);
    } else {
        p.regime = Regime::Benign;
        p.loss_exponent = alpha;
        p.discovery_exponent = 1.0;
    }
    return p;
}

nlohmann::json RegimePrediction::to_json() const {
    return {{"alpha", alpha},
            {"beta", beta},
            {"gamma", gamma},
            {"regime", to_string(regime)},
            {"loss_exponent", loss_exponent},
            {"discovery_exponent", discovery_exponent},
            {"degenerate", degenerate},
            {"sign_convention", "loss ~ N^-loss_exponent, D ~ N^discovery_exponent"}};
}

PowerLawFit fit_power_law(std::span<const Point> points, FitWindow window) {
    std::vector<double> lx;
    std::vector<double> ly;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto& p = points[i];
        if (!(p.x > 0.0) || !(p.y > 0.0) || !std::isfinite(p.x) || !std::isfinite(p.y)) {
            char buf[160];
            std::snprintf(buf, sizeof(buf),
                          "fit_power_law: point %zu (x=%g, y=%g) must have positive finite "
                          "coordinates",
                          i, p.x, p.y);
            throw std::invalid_argument(buf);
        }
        if (p.x >= window.lo && p.x <= window.hi) {
            lx.push_back(std::log(p.x));
            ly.push_back(std::log(p.y));
        }
    }
    if (lx.size() < 3) {
        throw std::invalid_argument("fit_power_law: need at least 3 points in the window, got " +
                                    std::to_string(lx.size()));
    }
    const auto n = static_cast<double>(lx.size());
    double mx = 0.0;
    double my = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        mx += lx[i];
        my += ly[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0;
    double sxy = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
    }
    if (!(sxx > 0.0)) {
        throw std::invalid_argument("fit_power_law: all x values in the window coincide");
    }
    PowerLawFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    double ss = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        const double r = ly[i] - (fit.intercept + fit.slope * lx[i]);
        ss += r * r;
    }
    fit.residual_rms = std::sqrt(ss / n);
    fit.x_lo = std::exp(*std::min_element(lx.begin(), lx.end()));
    fit.x_hi = std::exp(*std::max_element(lx.begin(), lx.end()));
    fit.points = lx.size();
    return fit;
}

nlohmann::json PowerLawFit::to_json() const {
    return {{"slope", slope},     {"intercept", intercept},       {"x_lo", x_lo},
            {"x_hi", x_hi},       {"residual_rms", residual_rms}, {"points", points},
            {"model", "log(y) = intercept + slope * log(x)"}};
}

FitWindow last_decade(std::span<const Point> points) {
    double hi = 0.0;
    for (const auto& p : points) {
        hi = std::max(hi, p.x);
    }
    return {hi / 10.0, hi};
}

bool RegimeReport::pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const RegimeCheck& c) { return c.pass; });
}

nlohmann::json RegimeReport::to_json() const {
    nlohmann::json cs = nlohmann::json::array();
    for (const auto& c : checks) {
        cs.push_back({{"quantity", c.quantity},
                      {"predicted", c.predicted},
                      {"measured", c.measured},
                      {"tolerance", c.tolerance},
                      {"pass", c.pass}});
    }
    return {{"prediction", prediction.to_json()},
            {"window", {window.lo, window.hi}},
            {"loss_fit", loss_fit.to_json()},
            {"discovery_fit", discovery_fit.to_json()},
            {"checks", std::move(cs)},
            {"pass", pass()}};
}

RegimeReport verify_regime(std::span<const allocation::ScalingRow> rows,
                           const RegimePrediction& prediction, RegimeTolerances tolerances,
                           const FitWindow* window) {
    std::vector<Point> loss_pts;
    std::vector<Point> disc_pts;
    double lo = std::numeric_limits<double>::infinity();
    double hi = 0.0;
    for (const auto& r : rows) {
        if (r.budget <= 0) {
            continue;
        }
        const auto n = static_cast<double>(r.budget);
        lo = std::min(lo, n);
        hi = std::max(hi, n);
        loss_pts.push_back({n, r.expected_loss});
        disc_pts.push_back({n, static_cast<double>(r.discovered)});
    }
    if (loss_pts.empty() || hi < 100.0 * lo) {
        throw std::invalid_argument("verify_regime: simulation must span at least two decades of N");
    }
    RegimeReport report;
    report.prediction = prediction;
    report.window = window != nullptr ? *window : last_decade(loss_pts);
    report.loss_fit = fit_power_law(loss_pts, report.window);
    report.discovery_fit = fit_power_law(disc_pts, report.window);

    const double loss_measured = -report.loss_fit.slope;
    const double disc_measured = report.discovery_fit.slope;
    report.checks.push_back({"loss_exponent", prediction.loss_exponent, loss_measured,
                             tolerances.loss,
                             std::abs(loss_measured - prediction.loss_exponent) <= tolerances.loss});
    report.checks.push_back(
        {"discovery_exponent", prediction.discovery_exponent, disc_measured, tolerances.discovery,
         std::abs(disc_measured - prediction.discovery_exponent) <= tolerances.discovery});
    return report;
}

void print_regime_table(std::ostream& out, const RegimeReport& report) {
    char line[160];
    std::snprintf(line, sizeof(line), "%-20s %10s %10s %10s %5s\n", "quantity", "predicted",
                  "measured", "tolerance", "pass");
    out << line;
    for (const auto& c : report.checks) {
        std::snprintf(line, sizeof(line), "%-20s %10.4f %10.4f %10.4f %5s\n", c.quantity.c_str(),
                      c.predicted, c.measured, c.tolerance, c.pass ? "yes" : "no");
        out << line;
    }
}

}  // namespace saelab::theory
