#pragma once

// File formats shared by every module: round-trip number formatting, the
// little-endian float64 matrix + JSON sidecar format, and stable hashing.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace saelab::io {

/// Shortest "%.17g"-style text that parses back to the same double.
std::string format_double(double x);

/// FNV-1a 64-bit over bytes; stable across platforms and runs.
std::uint64_t fnv1a64(std::string_view bytes);
/// Hex digest of fnv1a64(j.dump()) (nlohmann dumps object keys sorted).
std::string config_hash(const nlohmann::json& j);

/// Row-major float64 matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

/// Writes `path` (raw little-endian float64) and `path` + ".json" (sidecar with
/// "shape", "dtype", "byte_order" and any extra `meta` keys).
void write_binary(const std::filesystem::path& path, std::span<const double> values,
                  const nlohmann::json& meta);
/// Reads values and sidecar back; throws on size or dtype mismatch.
std::vector<double> read_binary(const std::filesystem::path& path, nlohmann::json* meta);

void write_matrix(const std::filesystem::path& path, const Matrix& m, nlohmann::json meta = {});
Matrix read_matrix(const std::filesystem::path& path, nlohmann::json* meta = nullptr);

void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

/// 1-based line number of byte offset `offset` in `text`.
std::size_t line_of_offset(std::string_view text, std::size_t offset);

}  // namespace saelab::io
