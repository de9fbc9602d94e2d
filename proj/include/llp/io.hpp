#pragma once

#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "llp/common.hpp"

namespace llp::io {

static_assert(sizeof(double) == 8 && std::numeric_limits<double>::is_iec559);

inline void write_u64(std::ostream& out, std::uint64_t v) {
    std::array<unsigned char, 8> b;
    for (int i = 0; i < 8; ++i) b[static_cast<std::size_t>(i)] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b.data()), 8);
}

inline std::uint64_t read_u64(std::istream& in) {
    std::array<unsigned char, 8> b;
    in.read(reinterpret_cast<char*>(b.data()), 8);
    if (!in) throw IoError("unexpected end of file while reading u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[static_cast<std::size_t>(i)]) << (8 * i);
    return v;
}

inline void write_f64(std::ostream& out, double v) { write_u64(out, std::bit_cast<std::uint64_t>(v)); }

inline double read_f64(std::istream& in) { return std::bit_cast<double>(read_u64(in)); }

inline void write_magic(std::ostream& out, const char (&magic)[9]) { out.write(magic, 8); }

inline void expect_magic(std::istream& in, const char (&magic)[9], const std::string& what) {
    char buf[8];
    in.read(buf, 8);
    if (!in || std::memcmp(buf, magic, 8) != 0) throw IoError("bad magic in " + what + " file");
}

// Shortest decimal round-trip representation; used everywhere a float lands
// in a CSV so reports are byte-stable across runs.
inline std::string format_double(double v) {
    std::array<char, 32> buf;
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    if (ec != std::errc{}) throw IoError("float formatting failed");
    return std::string(buf.data(), ptr);
}

inline double parse_double(std::string_view s) {
    double v{};
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) throw IoError("bad float field: '" + std::string(s) + "'");
    return v;
}

inline long long parse_int(std::string_view s) {
    long long v{};
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) throw IoError("bad integer field: '" + std::string(s) + "'");
    return v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    return out;
}

inline std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string() + " for reading");
    return in;
}

// Flat matrix container shared by the embedding bank and external feature
// ingestion: 8-byte magic, n and d as u64 LE, then n*d f64 LE row-major.
inline void save_matrix(const std::filesystem::path& path, const char (&magic)[9], std::size_t n, std::size_t d,
                        std::span<const double> data) {
    auto out = open_output(path);
    write_magic(out, magic);
    write_u64(out, n);
    write_u64(out, d);
    for (double v : data) write_f64(out, v);
    if (!out) throw IoError("write failure on " + path.string());
}

struct MatrixFile {
    std::size_t n = 0;
    std::size_t d = 0;
    std::vector<double> data;
};

inline MatrixFile load_matrix(const std::filesystem::path& path, const char (&magic)[9]) {
    auto in = open_input(path);
    expect_magic(in, magic, path.string());
    MatrixFile m;
    m.n = static_cast<std::size_t>(read_u64(in));
    m.d = static_cast<std::size_t>(read_u64(in));
    m.data.resize(m.n * m.d);
    for (auto& v : m.data) v = read_f64(in);
    return m;
}

}  // namespace llp::io
