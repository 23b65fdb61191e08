#include "cprobe/config.hpp"

#include <charconv>
#include <fstream>
#include <istream>

#include <fmt/format.h>

#include "cprobe/error.hpp"
#include "text_util.hpp"

namespace cprobe {

KeyValueConfig KeyValueConfig::parse(std::istream& in, const std::string& source_name) {
    KeyValueConfig config;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string_view text = detail::trim(line);
        if (text.empty() || text.front() == '#') continue;
        const auto eq = text.find('=');
        if (eq == std::string_view::npos) {
            throw InvalidArgument(fmt::format("{}:{}: expected key = value", source_name, line_no));
        }
        const std::string key(detail::trim(text.substr(0, eq)));
        if (key.empty()) throw InvalidArgument(fmt::format("{}:{}: empty key", source_name, line_no));
        if (config.contains(key)) {
            throw InvalidArgument(fmt::format("{}:{}: duplicate key '{}'", source_name, line_no, key));
        }
        config.set(key, std::string(detail::trim(text.substr(eq + 1))));
    }
    return config;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError(fmt::format("cannot open config '{}'", path.string()));
    return parse(in, path.filename().string());
}

void KeyValueConfig::set(std::string key, std::string value) { values_[std::move(key)] = std::move(value); }

std::optional<std::string> KeyValueConfig::get(std::string_view key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
}

std::string KeyValueConfig::get_string(std::string_view key, std::string fallback) const {
    auto v = get(key);
    return v ? *v : std::move(fallback);
}

double KeyValueConfig::get_double(std::string_view key, double fallback) const {
    const auto v = get(key);
    if (!v) return fallback;
    const auto x = detail::parse_double(*v);
    if (!x) throw InvalidArgument(fmt::format("config: '{}' must be a number, got '{}'", key, *v));
    return *x;
}

std::uint64_t KeyValueConfig::get_uint(std::string_view key, std::uint64_t fallback) const {
    const auto v = get(key);
    if (!v) return fallback;
    std::uint64_t x = 0;
    const auto [end, ec] = std::from_chars(v->data(), v->data() + v->size(), x);
    if (ec != std::errc() || end != v->data() + v->size()) {
        throw InvalidArgument(fmt::format("config: '{}' must be a non-negative integer, got '{}'", key, *v));
    }
    return x;
}

bool KeyValueConfig::get_bool(std::string_view key, bool fallback) const {
    const auto v = get(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes") return true;
    if (*v == "false" || *v == "0" || *v == "no") return false;
    throw InvalidArgument(fmt::format("config: '{}' must be true or false, got '{}'", key, *v));
}

std::string KeyValueConfig::serialize() const {
    std::string out;
    for (const auto& [k, v] : values_) out += fmt::format("{} = {}\n", k, v);
    return out;
}

}  // namespace cprobe
