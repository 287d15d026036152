#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "saelab/io.hpp"

namespace io = saelab::io;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("saelab_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_SUITE("io") {

TEST_CASE("format_double round trips") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1e6, 1e6);
    for (int i = 0; i < 2000; ++i) {
        const double x = u(rng) * std::pow(10.0, (i % 40) - 20);
        CHECK(std::stod(io::format_double(x)) == x);
    }
    CHECK(io::format_double(0.5) == "0.5");
    CHECK(io::format_double(3.0) == "3");
}

TEST_CASE("fnv1a64 reference values") {
    CHECK(io::fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(io::fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(io::fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("config hash ignores key order") {
    const auto a = nlohmann::json::parse(R"({"x": 1, "y": [1, 2]})");
    const auto b = nlohmann::json::parse(R"({"y": [1, 2], "x": 1})");
    CHECK(io::config_hash(a) == io::config_hash(b));
    CHECK(io::config_hash(a).size() == 16);
    CHECK(io::config_hash(a) != io::config_hash(nlohmann::json{{"x", 2}, {"y", {1, 2}}}));
}

TEST_CASE("binary matrix round trip and byte layout") {
    const auto dir = scratch_dir("io");
    io::Matrix m{2, 3, {1.0, -2.5, 3.25, 0.0, 1e-300, std::numeric_limits<double>::max()}};
    io::write_matrix(dir / "m.bin", m, {{"note", "x"}});
    CHECK(fs::file_size(dir / "m.bin") == 6 * sizeof(double));
    nlohmann::json meta;
    const auto back = io::read_matrix(dir / "m.bin", &meta);
    CHECK(back.rows == 2);
    CHECK(back.cols == 3);
    CHECK(back.data == m.data);
    CHECK(meta["note"] == "x");
    CHECK(meta["shape"] == nlohmann::json{2, 3});
    CHECK(meta["dtype"] == "float64");

    std::ifstream in(dir / "m.bin", std::ios::binary);
    unsigned char bytes[16];
    in.read(reinterpret_cast<char*>(bytes), 16);
    // 1.0 = 0x3FF0000000000000 little-endian.
    CHECK(bytes[7] == 0x3F);
    CHECK(bytes[6] == 0xF0);
    CHECK(bytes[0] == 0x00);
}

TEST_CASE("binary read rejects a size mismatch") {
    const auto dir = scratch_dir("io_bad");
    io::Matrix m{2, 2, {1, 2, 3, 4}};
    io::write_matrix(dir / "m.bin", m);
    fs::resize_file(dir / "m.bin", 3 * sizeof(double));
    CHECK_THROWS(io::read_matrix(dir / "m.bin"));
    CHECK_THROWS(io::read_matrix(dir / "missing.bin"));
}

TEST_CASE("line_of_offset") {
    const std::string t = "ab\ncd\n\nef";
    CHECK(io::line_of_offset(t, 0) == 1);
    CHECK(io::line_of_offset(t, 2) == 1);
    CHECK(io::line_of_offset(t, 3) == 2);
    CHECK(io::line_of_offset(t, 6) == 3);
    CHECK(io::line_of_offset(t, 7) == 4);
}

}  // TEST_SUITE
