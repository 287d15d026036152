#include "saelab/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace saelab::io {

std::string format_double(double x) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string config_hash(const nlohmann::json& j) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(j.dump())));
    return buf;
}

namespace {

std::uint64_t to_little(std::uint64_t v) {
    if constexpr (std::endian::native == std::endian::little) {
        return v;
    } else {
        std::uint64_t r = 0;
        for (int i = 0; i < 8; ++i) {
            r = (r << 8) | ((v >> (8 * i)) & 0xff);
        }
        return r;
    }
}

std::filesystem::path sidecar_of(const std::filesystem::path& path) {
    return std::filesystem::path(path.string() + ".json");
}

}  // namespace

void write_binary(const std::filesystem::path& path, std::span<const double> values,
                  const nlohmann::json& meta) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    }
    for (double v : values) {
        const std::uint64_t bits = to_little(std::bit_cast<std::uint64_t>(v));
        out.write(reinterpret_cast<const char*>(&bits), sizeof(bits));
    }
    nlohmann::json side = meta.is_object() ? meta : nlohmann::json::object();
    side["dtype"] = "float64";
    side["byte_order"] = "little";
    side["count"] = values.size();
    write_text(sidecar_of(path), side.dump(2) + "\n");
}

std::vector<double> read_binary(const std::filesystem::path& path, nlohmann::json* meta) {
    const nlohmann::json side = nlohmann::json::parse(read_text(sidecar_of(path)));
    if (side.value("dtype", "") != "float64" || side.value("byte_order", "") != "little") {
        throw std::runtime_error(path.string() + ": sidecar must declare float64/little");
    }
    const auto count = side.at("count").get<std::size_t>();
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    std::vector<double> values(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::uint64_t bits = 0;
        if (!in.read(reinterpret_cast<char*>(&bits), sizeof(bits))) {
            throw std::runtime_error(path.string() + ": truncated, expected " +
                                     std::to_string(count) + " values");
        }
        values[i] = std::bit_cast<double>(to_little(bits));
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw std::runtime_error(path.string() + ": trailing bytes after " +
                                 std::to_string(count) + " values");
    }
    if (meta != nullptr) {
        *meta = side;
    }
    return values;
}

void write_matrix(const std::filesystem::path& path, const Matrix& m, nlohmann::json meta) {
    if (m.data.size() != m.rows * m.cols) {
        throw std::invalid_argument("matrix data size does not match shape");
    }
    if (!meta.is_object()) {
        meta = nlohmann::json::object();
    }
    meta["shape"] = {m.rows, m.cols};
    meta["layout"] = "row_major";
    write_binary(path, m.data, meta);
}

Matrix read_matrix(const std::filesystem::path& path, nlohmann::json* meta) {
    nlohmann::json side;
    Matrix m;
    m.data = read_binary(path, &side);
    const auto& shape = side.at("shape");
    m.rows = shape.at(0).get<std::size_t>();
    m.cols = shape.at(1).get<std::size_t>();
    if (m.rows * m.cols != m.data.size()) {
        throw std::runtime_error(path.string() + ": shape does not match value count");
    }
    if (meta != nullptr) {
        *meta = std::move(side);
    }
    return m;
}

void write_text(const std::filesystem::path& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    }
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t line_of_offset(std::string_view text, std::size_t offset) {
    offset = std::min(offset, text.size());
    std::size_t line = 1;
    for (std::size_t i = 0; i < offset; ++i) {
        if (text[i] == '\n') {
            ++line;
        }
    }
    return line;
}

}  // namespace saelab::io
