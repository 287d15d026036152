#include <omp.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "saelab/experiments.hpp"
#include "saelab/rng.hpp"

namespace saelab::experiments {

namespace kernels {

namespace {

void check(const io::Matrix& unit, std::span<const std::uint8_t> dead) {
    if (dead.size() != unit.rows) {
        throw std::invalid_argument("nearest neighbours: dead mask has wrong length");
    }
}

}  // namespace

NearestNeighbors nn_cosine_serial(const io::Matrix& unit, std::span<const std::uint8_t> dead,
                                  double high) {
    check(unit, dead);
    const std::size_t n = unit.rows;
    const std::size_t d = unit.cols;
    NearestNeighbors out;
    out.similarity.assign(n, std::numeric_limits<double>::quiet_NaN());
    out.index.assign(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        if (dead[i]) {
            continue;
        }
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i || dead[j]) {
                continue;
            }
            double c = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                c += unit(i, k) * unit(j, k);
            }
            if (out.index[i] == n || c > out.similarity[i]) {
                out.similarity[i] = c;
                out.index[i] = j;
            }
            if (j > i && c > high) {
                ++out.high_pairs;
            }
        }
    }
    return out;
}

NearestNeighbors nn_cosine_parallel(const io::Matrix& unit, std::span<const std::uint8_t> dead,
                                    double high) {
    check(unit, dead);
    const std::size_t n = unit.rows;
    const std::size_t d = unit.cols;
    NearestNeighbors out;
    out.similarity.assign(n, std::numeric_limits<double>::quiet_NaN());
    out.index.assign(n, n);
    constexpr std::size_t kBlock = 64;
    const std::size_t blocks = (n + kBlock - 1) / kBlock;
    std::size_t pairs = 0;
    const double* u = unit.data.data();

#pragma omp parallel for schedule(dynamic, 1) reduction(+ : pairs) if (blocks > 1 && !omp_in_parallel())
    for (std::size_t b = 0; b < blocks; ++b) {
        const std::size_t lo = b * kBlock;
        const std::size_t hi = std::min(n, lo + kBlock);
        std::vector<double> dots(hi - lo);
        for (std::size_t j = 0; j < n; ++j) {
            if (dead[j]) {
                continue;
            }
            const double* uj = u + j * d;
            for (std::size_t i = lo; i < hi; ++i) {
                const double* ui = u + i * d;
                double c = 0.0;
                for (std::size_t k = 0; k < d; ++k) {
                    c += ui[k] * uj[k];
                }
                dots[i - lo] = c;
            }
            for (std::size_t i = lo; i < hi; ++i) {
                if (dead[i] || i == j) {
                    continue;
                }
                const double c = dots[i - lo];
                if (out.index[i] == n || c > out.similarity[i]) {
                    out.similarity[i] = c;
                    out.index[i] = j;
                }
                if (j > i && c > high) {
                    ++pairs;
                }
            }
        }
    }
    out.high_pairs = pairs;
    return out;
}

}  // namespace kernels

double median(std::vector<double> values) {
    if (values.empty()) {
        throw std::invalid_argument("median of an empty set");
    }
    const std::size_t mid = values.size() / 2;
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid),
                     values.end());
    const double upper = values[mid];
    if (values.size() % 2 == 1) {
        return upper;
    }
    const double lower =
        *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lower + upper);
}

GeometryReport decoder_geometry(const io::Matrix& decoder, const GeometryOptions& options,
                                std::span<const std::size_t> fire_counts,
                                std::size_t fire_samples) {
    const std::size_t d = decoder.rows;
    const std::size_t n = decoder.cols;
    if (n < 2) {
        throw std::invalid_argument("decoder geometry needs at least 2 latents, got " +
                                    std::to_string(n));
    }
    if (!fire_counts.empty() && fire_counts.size() != n) {
        throw std::invalid_argument("decoder geometry: activation counts have wrong length");
    }
    if (options.bins == 0) {
        throw std::invalid_argument("decoder geometry: need at least one histogram bin");
    }
    GeometryReport rep;
    rep.latents = n;
    rep.high = options.high;
    rep.dead.assign(n, 0);
    io::Matrix unit{n, d, std::vector<double>(n * d, 0.0)};
    for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            s += decoder(k, j) * decoder(k, j);
        }
        const double norm = std::sqrt(s);
        if (!(norm > 0.0) || !std::isfinite(norm) || (!fire_counts.empty() && fire_counts[j] == 0)) {
            rep.dead[j] = 1;
            continue;
        }
        for (std::size_t k = 0; k < d; ++k) {
            unit(j, k) = decoder(k, j) / norm;
        }
    }
    rep.live = n - static_cast<std::size_t>(std::count(rep.dead.begin(), rep.dead.end(), 1));
    if (rep.live < 2) {
        throw std::invalid_argument("decoder geometry needs at least 2 live latents, got " +
                                    std::to_string(rep.live));
    }
    auto nn = kernels::nn_cosine_parallel(unit, rep.dead, options.high);
    rep.similarity = std::move(nn.similarity);
    rep.neighbor = std::move(nn.index);
    rep.high_pairs = nn.high_pairs;

    rep.bin_edges.resize(options.bins + 1);
    for (std::size_t b = 0; b <= options.bins; ++b) {
        rep.bin_edges[b] = -1.0 + 2.0 * static_cast<double>(b) / static_cast<double>(options.bins);
    }
    rep.histogram.assign(options.bins, 0);
    std::vector<double> live_sims;
    for (std::size_t j = 0; j < n; ++j) {
        if (rep.dead[j]) {
            continue;
        }
        const double s = std::clamp(rep.similarity[j], -1.0, 1.0);
        rep.similarity[j] = s;
        live_sims.push_back(s);
        const auto b = static_cast<std::size_t>((s + 1.0) / 2.0 * static_cast<double>(options.bins));
        ++rep.histogram[std::min(b, options.bins - 1)];
        rep.high_latents += s > options.high;
    }
    rep.median = median(std::move(live_sims));
    if (!fire_counts.empty() && fire_samples > 0) {
        for (std::size_t c : fire_counts) {
            rep.fire_fraction.push_back(static_cast<double>(c) /
                                        static_cast<double>(fire_samples));
        }
    }
    return rep;
}

nlohmann::json GeometryReport::to_json() const {
    nlohmann::json latents_j = nlohmann::json::array();
    for (std::size_t j = 0; j < latents; ++j) {
        nlohmann::json l{{"latent", j}, {"dead", dead[j] != 0}};
        if (dead[j]) {
            l["similarity"] = nullptr;
            l["neighbor"] = nullptr;
        } else {
            l["similarity"] = similarity[j];
            l["neighbor"] = neighbor[j];
        }
        if (!fire_fraction.empty()) {
            l["fire_fraction"] = fire_fraction[j];
        }
        latents_j.push_back(std::move(l));
    }
    return {{"latents", latents},
            {"live", live},
            {"median", median},
            {"high_threshold", high},
            {"high_latents", high_latents},
            {"high_pairs", high_pairs},
            {"bin_edges", bin_edges},
            {"histogram", histogram},
            {"per_latent", latents_j}};
}

RandomBaseline random_baseline(std::size_t latents, std::size_t dim, std::size_t resamples,
                               std::uint64_t seed) {
    if (latents < 2 || dim == 0 || resamples == 0) {
        throw std::invalid_argument("random baseline needs >= 2 latents, dim >= 1, resamples >= 1");
    }
    RandomBaseline rb;
    rb.latents = latents;
    rb.dim = dim;
    rb.resamples = resamples;
    std::vector<double> pooled;
    pooled.reserve(latents * resamples);
    const std::vector<std::uint8_t> alive(latents, 0);
    double max_sum = 0.0;
    rb.max = -1.0;
    for (std::size_t r = 0; r < resamples; ++r) {
        Rng rng = make_rng(derive_seed(seed, r));
        std::normal_distribution<double> normal(0.0, 1.0);
        io::Matrix unit{latents, dim, std::vector<double>(latents * dim)};
        for (std::size_t i = 0; i < latents; ++i) {
            double s = 0.0;
            do {
                s = 0.0;
                for (std::size_t k = 0; k < dim; ++k) {
                    unit(i, k) = normal(rng);
                    s += unit(i, k) * unit(i, k);
                }
            } while (s == 0.0);
            const double inv = 1.0 / std::sqrt(s);
            for (std::size_t k = 0; k < dim; ++k) {
                unit(i, k) *= inv;
            }
        }
        const auto nn = kernels::nn_cosine_parallel(unit, alive, 1.0);
        const double m = *std::max_element(nn.similarity.begin(), nn.similarity.end());
        max_sum += m;
        rb.max = std::max(rb.max, m);
        pooled.insert(pooled.end(), nn.similarity.begin(), nn.similarity.end());
    }
    rb.mean_max = max_sum / static_cast<double>(resamples);
    rb.median = median(std::move(pooled));
    return rb;
}

nlohmann::json RandomBaseline::to_json() const {
    return {{"latents", latents}, {"dim", dim},          {"resamples", resamples},
            {"median", median},   {"mean_max", mean_max}, {"max", max}};
}

}  // namespace saelab::experiments
