#include "saelab/allocation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>

#include "saelab/io.hpp"
#include "saelab/numeric.hpp"

namespace saelab::allocation {

namespace {

void require(bool ok, const std::string& message) {
    if (!ok) {
        throw std::invalid_argument(message);
    }
}

constexpr double kConvexitySlack = 1e-12;

}  // namespace

// ---------------------------------------------------------------- LossCurve

LossCurve LossCurve::step(double satisfied_loss, double unsatisfied_loss) {
    require(std::isfinite(satisfied_loss) && std::isfinite(unsatisfied_loss),
            "step curve: losses must be finite");
    require(satisfied_loss <= unsatisfied_loss,
            "step curve: satisfied loss must not exceed unsatisfied loss");
    return LossCurve(Kind::Step, satisfied_loss, unsatisfied_loss, {});
}

LossCurve LossCurve::power_law(double beta, double floor) {
    require(std::isfinite(beta) && beta > 0.0, "power-law curve: beta must be > 0");
    require(std::isfinite(floor) && floor >= 0.0, "power-law curve: floor must be >= 0");
    return LossCurve(Kind::PowerLaw, beta, floor, {});
}

LossCurve LossCurve::tabulated(std::vector<double> values) {
    require(!values.empty(), "tabulated curve: needs at least one value");
    for (std::size_t n = 0; n < values.size(); ++n) {
        require(std::isfinite(values[n]),
                "tabulated curve: value at n=" + std::to_string(n) + " is not finite");
    }
    const double scale = std::abs(values.front()) + 1.0;
    double previous_gain = std::numeric_limits<double>::infinity();
    for (std::size_t n = 0; n + 1 < values.size(); ++n) {
        const double gain = values[n] - values[n + 1];
        require(gain >= 0.0,
                "tabulated curve: increases between n=" + std::to_string(n) + " and n=" +
                    std::to_string(n + 1));
        require(gain <= previous_gain + kConvexitySlack * scale,
                "tabulated curve: marginal gain increases at n=" + std::to_string(n) +
                    " (curve must be convex)");
        previous_gain = gain;
    }
    return LossCurve(Kind::Tabulated, 0.0, 0.0, std::move(values));
}

double LossCurve::operator()(std::int64_t n) const {
    if (n < 0) {
        throw std::out_of_range("loss curve evaluated at negative latent count");
    }
    switch (kind_) {
    case Kind::Step:
        return n == 0 ? b_ : a_;
    case Kind::PowerLaw:
        if (n == 0) {
            // Minimal convex extension: L(0) - L(1) == L(1) - L(2).
            return b_ + 2.0 - std::pow(2.0, -a_);
        }
        return b_ + std::pow(static_cast<double>(n), -a_);
    case Kind::Tabulated: {
        const auto last = static_cast<std::int64_t>(values_.size()) - 1;
        return values_[static_cast<std::size_t>(std::min(n, last))];
    }
    }
    return 0.0;
}

double LossCurve::at(double n) const {
    if (!(n >= 0.0)) {
        throw std::out_of_range("loss curve evaluated at negative latent count");
    }
    if (n < 1.0) {
        const double l0 = (*this)(0);
        return l0 + n * ((*this)(1) - l0);
    }
    switch (kind_) {
    case Kind::Step:
        return a_;
    case Kind::PowerLaw:
        return b_ + std::pow(n, -a_);
    case Kind::Tabulated: {
        const double top = static_cast<double>(values_.size() - 1);
        if (n >= top) {
            return values_.back();
        }
        const auto lo = static_cast<std::size_t>(n);
        const double t = n - static_cast<double>(lo);
        return values_[lo] + t * (values_[lo + 1] - values_[lo]);
    }
    }
    return 0.0;
}

nlohmann::json LossCurve::to_json() const {
    switch (kind_) {
    case Kind::Step:
        return {{"kind", "step"}, {"satisfied_loss", a_}, {"unsatisfied_loss", b_}};
    case Kind::PowerLaw:
        return {{"kind", "power_law"}, {"beta", a_}, {"floor", b_}};
    case Kind::Tabulated:
        return {{"kind", "tabulated"}, {"values", values_}};
    }
    return {};
}

LossCurve LossCurve::from_json(const nlohmann::json& j) {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "step") {
        return step(j.value("satisfied_loss", 0.0), j.value("unsatisfied_loss", 1.0));
    }
    if (kind == "power_law") {
        return power_law(j.at("beta").get<double>(), j.value("floor", 0.0));
    }
    if (kind == "tabulated") {
        return tabulated(j.at("values").get<std::vector<double>>());
    }
    throw std::invalid_argument("unknown loss curve kind '" + kind + "'");
}

// ---------------------------------------------------------- FeatureEnsemble

FeatureEnsemble::FeatureEnsemble(std::vector<double> frequencies, std::vector<LossCurve> curves,
                                 std::vector<CurveSegment> segments, bool normalized)
    : frequencies_{std::move(frequencies)},
      curves_{std::move(curves)},
      segments_{std::move(segments)},
      normalized_{normalized} {
    require(!frequencies_.empty(), "feature ensemble is empty");
    for (std::size_t i = 0; i < frequencies_.size(); ++i) {
        const double p = frequencies_[i];
        require(std::isfinite(p) && p > 0.0 && p <= 1.0,
                "frequency of feature " + std::to_string(i) + " must lie in (0, 1]");
        require(i == 0 || p <= frequencies_[i - 1],
                "frequencies must be sorted non-increasing (feature " + std::to_string(i) + ")");
    }
    std::size_t next = 0;
    for (const auto& seg : segments_) {
        require(seg.first == next && seg.count > 0,
                "curve segments must tile the features contiguously");
        require(seg.curve < curves_.size(), "curve segment refers to an unknown curve");
        next += seg.count;
    }
    require(next == frequencies_.size(), "curve segments do not cover every feature");
}

FeatureEnsemble FeatureEnsemble::zipf(double alpha, std::size_t count, const LossCurve& curve,
                                      bool normalize) {
    return zipf_with_head(alpha, count, {}, curve, normalize);
}

FeatureEnsemble FeatureEnsemble::zipf_with_head(double alpha, std::size_t count,
                                                const std::vector<LossCurve>& head,
                                                const LossCurve& tail, bool normalize) {
    require(std::isfinite(alpha) && alpha > 0.0, "zipf ensemble: alpha must be > 0");
    require(count > 0, "zipf ensemble: needs at least one feature");
    require(head.size() <= count, "zipf ensemble: more head curves than features");
    std::vector<double> p(count);
    const double exponent = -(1.0 + alpha);
    for (std::size_t i = 0; i < count; ++i) {
        p[i] = std::pow(static_cast<double>(i + 1), exponent);
    }
    if (normalize) {
        CompensatedSum total;
        for (double v : p) {
            total.add(v);
        }
        const double z = total.value();
        for (double& v : p) {
            v /= z;
        }
    }
    std::vector<LossCurve> curves;
    std::vector<CurveSegment> segments;
    for (std::size_t i = 0; i < head.size(); ++i) {
        curves.push_back(head[i]);
        segments.push_back({i, 1, i});
    }
    if (head.size() < count) {
        curves.push_back(tail);
        segments.push_back({head.size(), count - head.size(), curves.size() - 1});
    }
    return FeatureEnsemble(std::move(p), std::move(curves), std::move(segments), normalize);
}

const LossCurve& FeatureEnsemble::curve(std::size_t i) const {
    if (i >= size()) {
        throw std::out_of_range("feature index out of range");
    }
    auto it = std::upper_bound(segments_.begin(), segments_.end(), i,
                               [](std::size_t v, const CurveSegment& s) { return v < s.first; });
    return curves_[std::prev(it)->curve];
}

nlohmann::json FeatureEnsemble::to_json() const {
    nlohmann::json curves = nlohmann::json::array();
    for (const auto& c : curves_) {
        curves.push_back(c.to_json());
    }
    nlohmann::json segs = nlohmann::json::array();
    for (const auto& s : segments_) {
        segs.push_back({{"first", s.first}, {"count", s.count}, {"curve", s.curve}});
    }
    return {{"normalized", normalized_},
            {"frequencies", frequencies_},
            {"curves", std::move(curves)},
            {"segments", std::move(segs)}};
}

FeatureEnsemble FeatureEnsemble::from_json(const nlohmann::json& j) {
    std::vector<LossCurve> curves;
    for (const auto& c : j.at("curves")) {
        curves.push_back(LossCurve::from_json(c));
    }
    std::vector<CurveSegment> segs;
    for (const auto& s : j.at("segments")) {
        segs.push_back({s.at("first").get<std::size_t>(), s.at("count").get<std::size_t>(),
                        s.at("curve").get<std::size_t>()});
    }
    return FeatureEnsemble(j.at("frequencies").get<std::vector<double>>(), std::move(curves),
                           std::move(segs), j.value("normalized", false));
}

// --------------------------------------------------------------- Allocation

nlohmann::json Allocation::to_json() const {
    return {{"kind", "integer"},
            {"total_latents", total_latents},
            {"expected_loss", expected_loss},
            {"discovered", discovered},
            {"counts", counts}};
}

nlohmann::json ContinuousAllocation::to_json() const {
    return {{"kind", "continuous"},     {"total_latents", total_latents},
            {"expected_loss", expected_loss}, {"discovered", discovered},
            {"kappa", kappa},           {"cutoff_iterations", cutoff_iterations},
            {"counts", counts}};
}

namespace {

template <typename Count, typename Eval>
double expected_loss_impl(const FeatureEnsemble& ensemble, std::span<const Count> counts,
                          Eval eval) {
    require(counts.size() == ensemble.size(), "allocation size does not match ensemble");
    CompensatedSum total;
    const auto freqs = ensemble.frequencies();
    for (const auto& seg : ensemble.segments()) {
        const LossCurve& curve = ensemble.curves()[seg.curve];
        const double unallocated = curve(0);
        for (std::size_t i = seg.first; i < seg.first + seg.count; ++i) {
            require(counts[i] >= 0, "negative latent count for feature " + std::to_string(i));
            const double l = counts[i] == 0 ? unallocated : eval(curve, counts[i]);
            total.add(freqs[i] * l);
        }
    }
    return total.value();
}

}  // namespace

double expected_loss(const FeatureEnsemble& ensemble, std::span<const std::int64_t> counts) {
    return expected_loss_impl(ensemble, counts,
                              [](const LossCurve& c, std::int64_t n) { return c(n); });
}

double expected_loss(const FeatureEnsemble& ensemble, std::span<const double> counts) {
    return expected_loss_impl(ensemble, counts,
                              [](const LossCurve& c, double n) { return c.at(n); });
}

// ---------------------------------------------------------- GreedyAllocator

bool GreedyAllocator::lower_priority(const Entry& a, const Entry& b) {
    if (a.gain != b.gain) {
        return a.gain < b.gain;
    }
    return a.feature > b.feature;
}

GreedyAllocator::GreedyAllocator(const FeatureEnsemble& ensemble)
    : ensemble_{&ensemble}, counts_(ensemble.size(), 0) {
    // Within a segment the curve is shared and frequencies are non-increasing,
    // so the lowest-index unallocated feature dominates the rest of its segment.
    for (const auto& seg : ensemble.segments()) {
        frontier_.push_back(seg.first);
        push(seg.first);
    }
}

void GreedyAllocator::push(std::size_t feature) {
    const auto& curve = ensemble_->curve(feature);
    heap_.push_back({ensemble_->frequency(feature) * curve.gain(counts_[feature]), feature});
    std::push_heap(heap_.begin(), heap_.end(), lower_priority);
}

void GreedyAllocator::advance_to(std::int64_t budget) {
    if (budget < budget_) {
        throw std::invalid_argument("greedy allocator budgets must be non-decreasing");
    }
    const auto& segments = ensemble_->segments();
    while (budget_ < budget) {
        std::pop_heap(heap_.begin(), heap_.end(), lower_priority);
        const std::size_t feature = heap_.back().feature;
        heap_.pop_back();
        if (counts_[feature] == 0) {
            ++discovered_;
            auto it = std::upper_bound(
                segments.begin(), segments.end(), feature,
                [](std::size_t v, const CurveSegment& s) { return v < s.first; });
            const auto s = static_cast<std::size_t>(std::distance(segments.begin(), it) - 1);
            const std::size_t next = frontier_[s] + 1;
            frontier_[s] = next;
            if (next < segments[s].first + segments[s].count) {
                push(next);
            }
        }
        ++counts_[feature];
        ++budget_;
        push(feature);
    }
}

Allocation GreedyAllocator::snapshot() const {
    Allocation a;
    a.counts = counts_;
    a.total_latents = budget_;
    a.discovered = discovered_;
    a.expected_loss = expected_loss(*ensemble_, std::span<const std::int64_t>(a.counts));
    return a;
}

Allocation greedy_allocate(const FeatureEnsemble& ensemble, std::int64_t budget) {
    require(budget >= 0, "latent budget must be >= 0");
    GreedyAllocator allocator(ensemble);
    allocator.advance_to(budget);
    return allocator.snapshot();
}

// ---------------------------------------------------- continuous_allocate

ContinuousAllocation continuous_allocate(const FeatureEnsemble& ensemble, double budget) {
    require(std::isfinite(budget) && budget > 0.0, "continuous allocation needs budget > 0");
    const auto& curves = ensemble.curves();
    for (const auto& c : curves) {
        if (c.kind() != LossCurve::Kind::PowerLaw || !(c == curves.front())) {
            throw std::invalid_argument(
                "continuous_allocate needs every feature on one shared power-law curve; "
                "use greedy_allocate for mixed curves");
        }
    }
    const double beta = curves.front().beta();
    const std::size_t m = ensemble.size();

    std::vector<double> weight(m);
    std::vector<double> prefix(m + 1, 0.0);
    CompensatedSum running;
    for (std::size_t i = 0; i < m; ++i) {
        weight[i] = std::pow(ensemble.frequency(i), 1.0 / (1.0 + beta));
        running.add(weight[i]);
        prefix[i + 1] = running.value();
    }

    // Active set is always a prefix [0, k) because weights are non-increasing.
    std::size_t k = m;
    std::size_t iterations = 0;
    double kappa = 0.0;
    while (true) {
        ++iterations;
        kappa = budget / prefix[k];
        const double threshold = 1.0 / kappa;
        auto it = std::partition_point(weight.begin(), weight.begin() + static_cast<long>(k),
                                       [&](double w) { return w >= threshold; });
        std::size_t next = static_cast<std::size_t>(std::distance(weight.begin(), it));
        next = std::max<std::size_t>(next, 1);
        if (next == k || iterations >= m) {
            break;
        }
        k = next;
    }

    ContinuousAllocation out;
    out.counts.assign(m, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
        out.counts[i] = kappa * weight[i];
    }
    out.total_latents = budget;
    out.discovered = k;
    out.kappa = kappa;
    out.cutoff_iterations = iterations;
    out.expected_loss = expected_loss(ensemble, std::span<const double>(out.counts));
    return out;
}

// ---------------------------------------------------------- simulate_scaling

std::vector<ScalingRow> simulate_scaling(const FeatureEnsemble& ensemble,
                                         std::span<const std::int64_t> budgets,
                                         std::span<const std::size_t> flagged) {
    for (std::size_t i = 0; i < budgets.size(); ++i) {
        require(budgets[i] >= 0, "budgets must be >= 0");
        require(i == 0 || budgets[i] > budgets[i - 1], "budgets must be strictly ascending");
    }
    for (auto f : flagged) {
        require(f < ensemble.size(), "flagged feature index out of range");
    }
    GreedyAllocator allocator(ensemble);
    std::vector<ScalingRow> rows;
    rows.reserve(budgets.size());
    for (auto budget : budgets) {
        allocator.advance_to(budget);
        const auto counts = allocator.counts();
        ScalingRow row;
        row.budget = budget;
        row.expected_loss = expected_loss(ensemble, counts);
        row.discovered = allocator.discovered();
        row.frac_latents_feature_1 =
            budget > 0 ? static_cast<double>(counts[0]) / static_cast<double>(budget) : 0.0;
        for (auto f : flagged) {
            row.flagged_counts.push_back(counts[f]);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_scaling_csv(std::ostream& out, std::span<const ScalingRow> rows) {
    out << "N,expected_loss,discovered,frac_latents_feature_1\n";
    for (const auto& r : rows) {
        out << r.budget << ',' << io::format_double(r.expected_loss) << ',' << r.discovered
            << ',' << io::format_double(r.frac_latents_feature_1) << '\n';
    }
}

nlohmann::json scaling_to_json(std::span<const ScalingRow> rows,
                               std::span<const std::size_t> flagged) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : rows) {
        nlohmann::json row = {{"N", r.budget},
                              {"expected_loss", r.expected_loss},
                              {"discovered", r.discovered},
                              {"frac_latents_feature_1", r.frac_latents_feature_1}};
        nlohmann::json fl = nlohmann::json::object();
        for (std::size_t i = 0; i < flagged.size() && i < r.flagged_counts.size(); ++i) {
            fl[std::to_string(flagged[i] + 1)] = r.flagged_counts[i];
        }
        row["flagged_counts"] = std::move(fl);
        arr.push_back(std::move(row));
    }
    return arr;
}

std::vector<std::int64_t> log_budgets(std::int64_t lo, std::int64_t hi, int per_decade) {
    require(lo >= 1 && hi >= lo, "log budgets need 1 <= lo <= hi");
    require(per_decade >= 1, "log budgets need at least one point per decade");
    const double a = std::log10(static_cast<double>(lo));
    const double b = std::log10(static_cast<double>(hi));
    const auto steps = static_cast<int>(std::ceil((b - a) * per_decade - 1e-9));
    std::vector<std::int64_t> out;
    for (int s = 0; s <= steps; ++s) {
        const double e = steps == 0 ? a : a + (b - a) * s / steps;
        const auto v = static_cast<std::int64_t>(std::llround(std::pow(10.0, e)));
        if (out.empty() || v > out.back()) {
            out.push_back(v);
        }
    }
    return out;
}

}  // namespace saelab::allocation
