#pragma once

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "scaleqsd/errors.hpp"

namespace scaleqsd::io {

// Shortest decimal string that parses back to the same double.
inline std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw InvalidArgument("io", "cannot parse number '" + std::string(s) + "'");
    }
    return v;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        auto pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

// Reads a numeric CSV with one header line. Returns rows of doubles.
inline std::vector<std::vector<double>> read_numeric_csv(std::istream& in, std::size_t expected_cols) {
    std::vector<std::vector<double>> rows;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        if (header) {
            header = false;
            continue;
        }
        auto cells = split_csv_line(line);
        if (cells.size() != expected_cols) {
            throw InvalidArgument("io", "expected " + std::to_string(expected_cols) +
                                            " columns, got " + std::to_string(cells.size()));
        }
        std::vector<double> row;
        row.reserve(cells.size());
        for (auto c : cells) row.push_back(parse_double(c));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("io", "cannot open '" + path + "' for writing");
    out << content;
}

}  // namespace scaleqsd::io
