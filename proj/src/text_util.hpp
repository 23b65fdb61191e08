#pragma once

#include <cctype>
#include <charconv>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cprobe::detail {

inline bool is_blank(std::string_view s) noexcept {
    for (char c : s) {
        if (!std::isspace(static_cast<unsigned char>(c))) return false;
    }
    return true;
}

inline std::string_view trim(std::string_view s) noexcept {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

inline std::optional<double> parse_double(std::string_view s) {
    s = trim(s);
    if (s.empty()) return std::nullopt;
    if (s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

// "a<sep>b<sep>c" -> {a, b, c}; nullopt if any piece is not a finite number.
inline std::optional<std::vector<double>> parse_number_list(std::string_view text, char sep) {
    std::vector<double> out;
    while (true) {
        const std::size_t pos = text.find(sep);
        const auto v = parse_double(text.substr(0, pos));
        if (!v) return std::nullopt;
        out.push_back(*v);
        if (pos == std::string_view::npos) break;
        text.remove_prefix(pos + 1);
    }
    return out;
}

}  // namespace cprobe::detail
