#pragma once

// Small string, CSV and file helpers shared by the other headers.

#include "traceql/error.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace traceql::text {

inline bool is_space(char c) noexcept {
    return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' || c == '\v';
}

inline std::string_view trim(std::string_view s) noexcept {
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

inline std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

inline bool iequals(std::string_view a, std::string_view b) noexcept {
    return a.size() == b.size() &&
           std::equal(a.begin(), a.end(), b.begin(), [](unsigned char x, unsigned char y) {
               return std::tolower(x) == std::tolower(y);
           });
}

inline bool starts_with(std::string_view s, std::string_view prefix) noexcept {
    return s.substr(0, prefix.size()) == prefix;
}

inline std::vector<std::string_view> split_lines(std::string_view s) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start <= s.size()) {
        auto end = s.find('\n', start);
        if (end == std::string_view::npos) {
            if (start < s.size()) lines.push_back(s.substr(start));
            break;
        }
        auto line = s.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        lines.push_back(line);
        start = end + 1;
    }
    return lines;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    for (;;) {
        auto pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            parts.push_back(s.substr(start));
            return parts;
        }
        parts.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
}

inline std::optional<double> parse_double(std::string_view s) {
    s = trim(s);
    if (s.empty()) return std::nullopt;
    // from_chars for double is available in libstdc++ 11.
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
    return value;
}

inline std::optional<long long> parse_int(std::string_view s) {
    s = trim(s);
    if (s.empty()) return std::nullopt;
    long long value = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
    return value;
}

// --- CSV (RFC 4180 quoting) --------------------------------------------------

inline bool csv_needs_quotes(std::string_view field) noexcept {
    return field.find_first_of(",\"\r\n") != std::string_view::npos ||
           (!field.empty() && (is_space(field.front()) || is_space(field.back())));
}

inline void append_csv_field(std::string& out, std::string_view field) {
    if (!csv_needs_quotes(field)) {
        out.append(field);
        return;
    }
    out.push_back('"');
    for (char c : field) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
}

inline std::string csv_row(const std::vector<std::string>& fields) {
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out.push_back(',');
        append_csv_field(out, fields[i]);
    }
    out.push_back('\n');
    return out;
}

struct CsvRow {
    std::size_t line = 0;  // 1-based line where the row starts
    std::vector<std::string> fields;
};

/// Parses CSV text into rows. Blank lines are skipped. Quoted fields may span lines.
inline std::vector<CsvRow> parse_csv(std::string_view input) {
    std::vector<CsvRow> rows;
    std::size_t i = 0, line = 1;
    while (i < input.size()) {
        // skip blank lines
        if (input[i] == '\n') { ++i; ++line; continue; }
        if (input[i] == '\r' && i + 1 < input.size() && input[i + 1] == '\n') {
            i += 2; ++line; continue;
        }
        CsvRow row;
        row.line = line;
        std::string field;
        bool in_quotes = false, was_quoted = false;
        std::size_t col = 1;
        for (;;) {
            if (i >= input.size()) {
                if (in_quotes) throw ParseError(line, col, "unterminated quoted field");
                row.fields.push_back(std::move(field));
                break;
            }
            char c = input[i];
            if (in_quotes) {
                if (c == '"') {
                    if (i + 1 < input.size() && input[i + 1] == '"') {
                        field.push_back('"');
                        i += 2; col += 2;
                        continue;
                    }
                    in_quotes = false;
                    ++i; ++col;
                    continue;
                }
                if (c == '\n') { ++line; col = 0; }
                field.push_back(c);
                ++i; ++col;
                continue;
            }
            if (c == '"' && field.empty() && !was_quoted) {
                in_quotes = was_quoted = true;
                ++i; ++col;
                continue;
            }
            if (c == ',') {
                row.fields.push_back(std::move(field));
                field.clear();
                was_quoted = false;
                ++i; ++col;
                continue;
            }
            if (c == '\r' && i + 1 < input.size() && input[i + 1] == '\n') { ++i; continue; }
            if (c == '\n') {
                row.fields.push_back(std::move(field));
                ++i; ++line;
                break;
            }
            if (was_quoted) throw ParseError(line, col, "text after closing quote");
            field.push_back(c);
            ++i; ++col;
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

// --- files ---------------------------------------------------------------------

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw Error(ErrorKind::IoError, "read failed: " + path.string());
    return ss.str();
}

/// Writes through a sibling temporary file and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorKind::IoError, "cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) throw Error(ErrorKind::IoError, "write failed: " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw Error(ErrorKind::IoError, "rename failed: " + path.string() + ": " + ec.message());
}

inline std::string rfc3339_utc(std::chrono::system_clock::time_point tp) {
    auto secs = std::chrono::time_point_cast<std::chrono::seconds>(tp);
    std::time_t t = std::chrono::system_clock::to_time_t(secs);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace traceql::text
