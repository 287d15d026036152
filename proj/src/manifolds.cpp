#include "saelab/manifolds.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace saelab::manifolds {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

constexpr double kOrthoTolerance = 1e-9;

nlohmann::json geometry_to_json(const Geometry& g) {
    return std::visit(overloaded{
                          [](const Circle&) { return nlohmann::json{{"kind", "circle"}}; },
                          [](const Hypersphere& h) {
                              return nlohmann::json{{"kind", "hypersphere"}, {"dim", h.dim}};
                          },
                          [](const Shell& s) {
                              return nlohmann::json{{"kind", "shell"},
                                                    {"dim", s.dim},
                                                    {"r_min", s.r_min},
                                                    {"r_max", s.r_max}};
                          },
                      },
                      g);
}

Geometry geometry_from_json(const nlohmann::json& j) {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "circle") {
        return Circle{};
    }
    if (kind == "hypersphere" || kind == "sphere") {
        return Hypersphere{j.at("dim").get<std::size_t>()};
    }
    if (kind == "shell") {
        return Shell{j.at("dim").get<std::size_t>(), j.value("r_min", 0.5), j.value("r_max", 2.0)};
    }
    throw std::invalid_argument("unknown manifold kind '" + kind + "'");
}

void validate_geometry(const Geometry& g) {
    std::visit(overloaded{
                   [](const Circle&) {},
                   [](const Hypersphere& h) {
                       if (h.dim < 1) {
                           throw std::invalid_argument("hypersphere needs dim >= 1");
                       }
                   },
                   [](const Shell& s) {
                       if (s.dim < 1) {
                           throw std::invalid_argument("shell needs dim >= 1");
                       }
                       if (!(s.r_min >= 0.0) || !(s.r_min < s.r_max) || !std::isfinite(s.r_max)) {
                           throw std::invalid_argument("shell needs 0 <= r_min < r_max");
                       }
                   },
               },
               g);
}

}  // namespace

std::size_t dimension(const Geometry& g) {
    return std::visit(overloaded{
                          [](const Circle&) -> std::size_t { return 2; },
                          [](const Hypersphere& h) { return h.dim; },
                          [](const Shell& s) { return s.dim; },
                      },
                      g);
}

std::size_t ManifoldSpec::dim() const {
    return std::visit(overloaded{
                          [](const Composite& c) { return c.ambient_dim; },
                          [](const auto& g) { return dimension(Geometry{g}); },
                      },
                      kind);
}

nlohmann::json ManifoldSpec::to_json() const {
    nlohmann::json j = std::visit(
        overloaded{
            [](const Composite& c) {
                nlohmann::json fs = nlohmann::json::array();
                for (const auto& f : c.features) {
                    nlohmann::json cols = nlohmann::json::array();
                    for (std::size_t col = 0; col < f.basis.cols; ++col) {
                        std::vector<double> v(f.basis.rows);
                        for (std::size_t r = 0; r < f.basis.rows; ++r) {
                            v[r] = f.basis(r, col);
                        }
                        cols.push_back(v);
                    }
                    fs.push_back({{"geometry", geometry_to_json(f.geometry)},
                                  {"frequency", f.frequency},
                                  {"basis_columns", std::move(cols)}});
                }
                return nlohmann::json{
                    {"kind", "composite"}, {"ambient_dim", c.ambient_dim}, {"features", fs}};
            },
            [](const auto& g) { return geometry_to_json(Geometry{g}); },
        },
        kind);
    j["samples"] = samples;
    j["seed"] = seed;
    return j;
}

ManifoldSpec ManifoldSpec::from_json(const nlohmann::json& j) {
    ManifoldSpec spec;
    spec.samples = j.value("samples", std::size_t{1024});
    spec.seed = j.value("seed", std::uint64_t{0});
    if (j.at("kind").get<std::string>() == "composite") {
        Composite c;
        c.ambient_dim = j.at("ambient_dim").get<std::size_t>();
        for (const auto& f : j.at("features")) {
            CompositeFeature cf;
            cf.geometry = geometry_from_json(f.at("geometry"));
            cf.frequency = f.at("frequency").get<double>();
            const auto& cols = f.at("basis_columns");
            cf.basis.rows = c.ambient_dim;
            cf.basis.cols = cols.size();
            cf.basis.data.assign(cf.basis.rows * cf.basis.cols, 0.0);
            for (std::size_t col = 0; col < cols.size(); ++col) {
                const auto v = cols[col].get<std::vector<double>>();
                if (v.size() != c.ambient_dim) {
                    throw std::invalid_argument("composite basis column has wrong length");
                }
                for (std::size_t r = 0; r < v.size(); ++r) {
                    cf.basis(r, col) = v[r];
                }
            }
            c.features.push_back(std::move(cf));
        }
        spec.kind = std::move(c);
    } else {
        std::visit([&](auto g) { spec.kind = g; }, geometry_from_json(j));
    }
    validate(spec);
    return spec;
}

Composite axis_aligned_composite(const std::vector<std::pair<Geometry, double>>& features) {
    Composite c;
    for (const auto& f : features) {
        c.ambient_dim += dimension(f.first);
    }
    std::size_t offset = 0;
    for (const auto& [geometry, frequency] : features) {
        CompositeFeature cf;
        cf.geometry = geometry;
        cf.frequency = frequency;
        const std::size_t d = dimension(geometry);
        cf.basis.rows = c.ambient_dim;
        cf.basis.cols = d;
        cf.basis.data.assign(c.ambient_dim * d, 0.0);
        for (std::size_t k = 0; k < d; ++k) {
            cf.basis(offset + k, k) = 1.0;
        }
        offset += d;
        c.features.push_back(std::move(cf));
    }
    return c;
}

void validate(const ManifoldSpec& spec) {
    if (spec.samples == 0) {
        throw std::invalid_argument("manifold spec needs a positive sample count");
    }
    if (const auto* c = std::get_if<Composite>(&spec.kind)) {
        if (c->features.empty() || c->ambient_dim == 0) {
            throw std::invalid_argument("composite needs at least one feature and ambient_dim > 0");
        }
        auto column_dot = [&](const io::Matrix& a, std::size_t ca, const io::Matrix& b,
                              std::size_t cb) {
            double s = 0.0;
            for (std::size_t r = 0; r < c->ambient_dim; ++r) {
                s += a(r, ca) * b(r, cb);
            }
            return s;
        };
        for (std::size_t i = 0; i < c->features.size(); ++i) {
            const auto& f = c->features[i];
            validate_geometry(f.geometry);
            if (!(f.frequency >= 0.0 && f.frequency <= 1.0)) {
                throw std::invalid_argument("composite feature frequency must lie in [0, 1]");
            }
            if (f.basis.rows != c->ambient_dim || f.basis.cols != dimension(f.geometry)) {
                throw std::invalid_argument("composite feature " + std::to_string(i) +
                                            ": basis must be ambient_dim x feature dim");
            }
            for (std::size_t a = 0; a < f.basis.cols; ++a) {
                for (std::size_t b = a; b < f.basis.cols; ++b) {
                    const double target = a == b ? 1.0 : 0.0;
                    if (std::abs(column_dot(f.basis, a, f.basis, b) - target) > kOrthoTolerance) {
                        throw std::invalid_argument("composite feature " + std::to_string(i) +
                                                    ": basis columns are not orthonormal");
                    }
                }
            }
            for (std::size_t k = 0; k < i; ++k) {
                const auto& g = c->features[k];
                for (std::size_t a = 0; a < f.basis.cols; ++a) {
                    for (std::size_t b = 0; b < g.basis.cols; ++b) {
                        if (std::abs(column_dot(f.basis, a, g.basis, b)) >= kOrthoTolerance) {
                            throw std::invalid_argument(
                                "composite features " + std::to_string(k) + " and " +
                                std::to_string(i) + " have non-orthogonal subspaces");
                        }
                    }
                }
            }
        }
    } else {
        std::visit(overloaded{[](const Composite&) {}, [](const auto& g) { validate_geometry(g); }},
                   spec.kind);
    }
}

// ------------------------------------------------------------------ Sampler

Sampler::Sampler(const ManifoldSpec& spec, std::uint64_t seed)
    : spec_{spec}, dim_{spec.dim()}, rng_{make_rng(seed)} {
    validate(spec_);
}

void Sampler::draw(const Geometry& g, std::span<double> out) {
    std::visit(overloaded{
                   [&](const Circle&) {
                       const double theta = 2.0 * std::numbers::pi * uniform_(rng_);
                       out[0] = std::cos(theta);
                       out[1] = std::sin(theta);
                   },
                   [&](const Hypersphere& h) {
                       double norm2 = 0.0;
                       do {
                           norm2 = 0.0;
                           for (std::size_t k = 0; k < h.dim; ++k) {
                               out[k] = normal_(rng_);
                               norm2 += out[k] * out[k];
                           }
                       } while (norm2 == 0.0);
                       const double inv = 1.0 / std::sqrt(norm2);
                       for (std::size_t k = 0; k < h.dim; ++k) {
                           out[k] *= inv;
                       }
                   },
                   [&](const Shell& s) {
                       draw(Hypersphere{s.dim}, out);
                       const double r = s.r_min + (s.r_max - s.r_min) * uniform_(rng_);
                       for (std::size_t k = 0; k < s.dim; ++k) {
                           out[k] *= r;
                       }
                   },
               },
               g);
}

void Sampler::fill(std::span<double> out, std::size_t rows, std::span<std::uint8_t> active,
                   std::span<const std::span<double>> parts) {
    if (out.size() < rows * dim_) {
        throw std::invalid_argument("sampler output buffer too small");
    }
    if (const auto* c = std::get_if<Composite>(&spec_.kind)) {
        const std::size_t nf = c->features.size();
        if (!active.empty() && active.size() < rows * nf) {
            throw std::invalid_argument("sampler gate buffer too small");
        }
        if (!parts.empty() && parts.size() != nf) {
            throw std::invalid_argument("sampler needs one part buffer per feature");
        }
        for (std::size_t r = 0; r < rows; ++r) {
            auto x = out.subspan(r * dim_, dim_);
            std::fill(x.begin(), x.end(), 0.0);
            for (std::size_t i = 0; i < nf; ++i) {
                const auto& f = c->features[i];
                const std::size_t d = f.basis.cols;
                // Gate then value: the gate draw is consumed even when p is 0 or 1.
                const bool on = uniform_(rng_) < f.frequency;
                scratch_.assign(d, 0.0);
                if (on) {
                    draw(f.geometry, scratch_);
                    for (std::size_t a = 0; a < dim_; ++a) {
                        double s = 0.0;
                        for (std::size_t k = 0; k < d; ++k) {
                            s += f.basis(a, k) * scratch_[k];
                        }
                        x[a] += s;
                    }
                }
                if (!active.empty()) {
                    active[r * nf + i] = on ? 1 : 0;
                }
                if (!parts.empty()) {
                    std::copy(scratch_.begin(), scratch_.end(), parts[i].begin() + r * d);
                }
            }
        }
        return;
    }
    const Geometry g = std::visit(
        overloaded{[](const Composite&) -> Geometry { return Circle{}; },
                   [](const auto& v) -> Geometry { return v; }},
        spec_.kind);
    for (std::size_t r = 0; r < rows; ++r) {
        draw(g, out.subspan(r * dim_, dim_));
    }
}

Dataset sample(const ManifoldSpec& spec) {
    Sampler sampler(spec, spec.seed);
    Dataset data;
    data.x.rows = spec.samples;
    data.x.cols = spec.dim();
    data.x.data.assign(data.x.rows * data.x.cols, 0.0);
    if (const auto* c = std::get_if<Composite>(&spec.kind)) {
        const std::size_t nf = c->features.size();
        std::vector<std::uint8_t> gates(spec.samples * nf);
        std::vector<std::span<double>> part_spans;
        for (const auto& f : c->features) {
            io::Matrix m;
            m.rows = spec.samples;
            m.cols = f.basis.cols;
            m.data.assign(m.rows * m.cols, 0.0);
            data.parts.push_back(std::move(m));
        }
        for (auto& m : data.parts) {
            part_spans.emplace_back(m.data);
        }
        sampler.fill(data.x.data, spec.samples, gates, part_spans);
        data.active.rows = spec.samples;
        data.active.cols = nf;
        data.active.data.assign(gates.begin(), gates.end());
    } else {
        sampler.fill(data.x.data, spec.samples);
    }
    return data;
}

void save_dataset(const std::filesystem::path& path, const ManifoldSpec& spec,
                  const Dataset& data) {
    io::write_matrix(path, data.x, {{"spec", spec.to_json()}});
    if (data.active.rows > 0) {
        io::write_matrix(path.string() + ".active", data.active, {{"role", "feature gates"}});
    }
}

Dataset load_dataset(const std::filesystem::path& path, ManifoldSpec* spec) {
    nlohmann::json meta;
    Dataset data;
    data.x = io::read_matrix(path, &meta);
    const auto parsed = ManifoldSpec::from_json(meta.at("spec"));
    if (std::holds_alternative<Composite>(parsed.kind)) {
        data.active = io::read_matrix(path.string() + ".active");
    }
    if (spec != nullptr) {
        *spec = parsed;
    }
    return data;
}

}  // namespace saelab::manifolds
