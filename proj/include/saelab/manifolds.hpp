#pragma once

// Seeded generators of synthetic feature-manifold data.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <variant>
#include <vector>

#include <json.hpp>

#include "saelab/io.hpp"
#include "saelab/rng.hpp"

namespace saelab::manifolds {

/// Unit circle in R^2.
struct Circle {};

/// Unit sphere S^(dim-1) in R^dim.
struct Hypersphere {
    std::size_t dim = 2;
};

/// Uniform direction, radius uniform on [r_min, r_max].
struct Shell {
    std::size_t dim = 2;
    double r_min = 0.5;
    double r_max = 2.0;
};

using Geometry = std::variant<Circle, Hypersphere, Shell>;

std::size_t dimension(const Geometry& g);

/// One sparse feature of a composite: active with probability `frequency`,
/// in which case it contributes basis * f with f drawn from `geometry`.
struct CompositeFeature {
    Geometry geometry;
    double frequency = 1.0;
    io::Matrix basis;  // ambient_dim x dimension(geometry), orthonormal columns
};

struct Composite {
    std::size_t ambient_dim = 0;
    std::vector<CompositeFeature> features;
};

struct ManifoldSpec {
    std::variant<Circle, Hypersphere, Shell, Composite> kind;
    std::size_t samples = 1024;
    std::uint64_t seed = 0;

    std::size_t dim() const;
    nlohmann::json to_json() const;
    static ManifoldSpec from_json(const nlohmann::json& j);
};

/// Composite whose feature blocks occupy consecutive coordinate axes of
/// R^(sum of dims).
Composite axis_aligned_composite(const std::vector<std::pair<Geometry, double>>& features);

/// Throws std::invalid_argument for bad shells, non-orthonormal or
/// overlapping composite blocks, frequencies outside [0, 1].
void validate(const ManifoldSpec& spec);

/// Streaming sampler: each fill() continues the same deterministic stream.
class Sampler {
public:
    Sampler(const ManifoldSpec& spec, std::uint64_t seed);

    std::size_t dim() const noexcept { return dim_; }

    /// Writes `rows` samples row-major into out (size rows * dim()).
    /// For composites, `active` (size rows * features, if non-empty) receives
    /// the 0/1 gates and `parts` (one span per feature, rows * d_i each) the
    /// sub-manifold values (zero when inactive).
    void fill(std::span<double> out, std::size_t rows, std::span<std::uint8_t> active = {},
              std::span<const std::span<double>> parts = {});

private:
    void draw(const Geometry& g, std::span<double> out);

    ManifoldSpec spec_;
    std::size_t dim_;
    Rng rng_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
    std::vector<double> scratch_;
};

struct Dataset {
    io::Matrix x;                       // samples x dim
    io::Matrix active;                  // samples x features (composites only, 0/1)
    std::vector<io::Matrix> parts;      // per feature: samples x d_i (composites only)
};

/// Fixed-size dataset with spec.samples rows drawn from the stream seeded by spec.seed.
Dataset sample(const ManifoldSpec& spec);

/// x to `path` (+ path.json sidecar carrying the spec); composite gates to
/// path + ".active".
void save_dataset(const std::filesystem::path& path, const ManifoldSpec& spec, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& path, ManifoldSpec* spec = nullptr);

}  // namespace saelab::manifolds
