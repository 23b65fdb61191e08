#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace cprobe {

// Plain `key = value` settings. Blank lines and lines starting with '#' are
// ignored; values run to the end of the line with surrounding spaces trimmed.
class KeyValueConfig {
public:
    static KeyValueConfig parse(std::istream& in, const std::string& source_name = "<config>");
    static KeyValueConfig load(const std::filesystem::path& path);

    void set(std::string key, std::string value);
    bool contains(std::string_view key) const { return values_.find(key) != values_.end(); }
    std::optional<std::string> get(std::string_view key) const;

    // Typed accessors return `fallback` for absent keys and throw
    // InvalidArgument for malformed values.
    std::string get_string(std::string_view key, std::string fallback) const;
    double get_double(std::string_view key, double fallback) const;
    std::uint64_t get_uint(std::string_view key, std::uint64_t fallback) const;
    bool get_bool(std::string_view key, bool fallback) const;

    const std::map<std::string, std::string, std::less<>>& values() const noexcept { return values_; }
    std::string serialize() const;

private:
    std::map<std::string, std::string, std::less<>> values_;
};

}  // namespace cprobe
