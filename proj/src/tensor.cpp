#include "cprobe/tensor.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include <fmt/format.h>

namespace cprobe {

namespace {

std::uint32_t load_u32_le(const std::uint8_t* p) noexcept {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void store_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xFFu));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFFu));
    out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xFFu));
    out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xFFu));
}

[[noreturn]] void fail(TensorErrc code, const std::string& what) { throw TensorError(code, what); }

// prod(shape) with overflow detection.
std::optional<std::size_t> checked_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        if (d != 0 && n > std::numeric_limits<std::size_t>::max() / d) return std::nullopt;
        n *= d;
    }
    return n;
}

}  // namespace

std::string_view to_string(TensorErrc code) noexcept {
    switch (code) {
        case TensorErrc::io: return "io";
        case TensorErrc::bad_magic: return "bad_magic";
        case TensorErrc::truncated_header: return "truncated_header";
        case TensorErrc::bad_header_json: return "bad_header_json";
        case TensorErrc::bad_header_schema: return "bad_header_schema";
        case TensorErrc::unsupported_version: return "unsupported_version";
        case TensorErrc::unsupported_dtype: return "unsupported_dtype";
        case TensorErrc::truncated_payload: return "truncated_payload";
        case TensorErrc::shape_mismatch: return "shape_mismatch";
    }
    return "unknown";
}

TensorError::TensorError(TensorErrc code, const std::string& what)
    : InputError(fmt::format("tensor {}: {}", to_string(code), what)), code_(code) {}

std::size_t Tensor::element_count() const noexcept {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes) {
    constexpr std::size_t kPrefix = kTensorMagic.size() + 4;
    if (bytes.size() < kTensorMagic.size() ||
        std::memcmp(bytes.data(), kTensorMagic.data(), kTensorMagic.size()) != 0) {
        fail(TensorErrc::bad_magic, "missing CPROBE01 magic");
    }
    if (bytes.size() < kPrefix) fail(TensorErrc::truncated_header, "file ends inside the header length field");
    const std::uint32_t header_len = load_u32_le(bytes.data() + kTensorMagic.size());
    if (header_len > kMaxTensorHeaderBytes) {
        fail(TensorErrc::truncated_header, fmt::format("header length {} exceeds limit", header_len));
    }
    if (bytes.size() - kPrefix < header_len) {
        fail(TensorErrc::truncated_header,
             fmt::format("header length {} but only {} bytes follow", header_len, bytes.size() - kPrefix));
    }

    const auto header_begin = reinterpret_cast<const char*>(bytes.data() + kPrefix);
    const nlohmann::json header = nlohmann::json::parse(header_begin, header_begin + header_len, nullptr, false);
    if (header.is_discarded()) fail(TensorErrc::bad_header_json, "header is not valid JSON");
    if (!header.is_object()) fail(TensorErrc::bad_header_schema, "header is not a JSON object");

    const auto version = header.find("version");
    if (version == header.end() || !version->is_number_integer()) {
        fail(TensorErrc::bad_header_schema, "missing integer 'version'");
    }
    if (version->get<std::int64_t>() != kTensorVersion) {
        fail(TensorErrc::unsupported_version, fmt::format("version {}", version->dump()));
    }
    const auto dtype = header.find("dtype");
    if (dtype == header.end() || !dtype->is_string()) fail(TensorErrc::bad_header_schema, "missing string 'dtype'");
    if (dtype->get<std::string>() != "f32") fail(TensorErrc::unsupported_dtype, dtype->get<std::string>());

    const auto shape_it = header.find("shape");
    if (shape_it == header.end() || !shape_it->is_array()) fail(TensorErrc::bad_header_schema, "missing array 'shape'");
    Tensor t;
    for (const auto& d : *shape_it) {
        if (!d.is_number_unsigned()) fail(TensorErrc::bad_header_schema, "shape entries must be non-negative integers");
        t.shape.push_back(d.get<std::size_t>());
    }
    if (const auto meta = header.find("meta"); meta != header.end()) {
        if (!meta->is_object()) fail(TensorErrc::bad_header_schema, "'meta' must be an object");
        t.meta = *meta;
    }

    const std::size_t payload_bytes = bytes.size() - kPrefix - header_len;
    const auto count = checked_product(t.shape);
    if (!count || *count > std::numeric_limits<std::size_t>::max() / 4) {
        fail(TensorErrc::shape_mismatch, "shape product overflows");
    }
    const std::size_t expected = *count * 4;
    if (payload_bytes < expected) {
        fail(TensorErrc::truncated_payload, fmt::format("payload has {} bytes, shape needs {}", payload_bytes, expected));
    }
    if (payload_bytes > expected) {
        fail(TensorErrc::shape_mismatch, fmt::format("payload has {} bytes, shape needs {}", payload_bytes, expected));
    }

    const std::uint8_t* p = bytes.data() + kPrefix + header_len;
    t.data.resize(*count);
    for (std::size_t i = 0; i < *count; ++i, p += 4) t.data[i] = std::bit_cast<float>(load_u32_le(p));
    return t;
}

std::vector<std::uint8_t> encode_tensor(const Tensor& tensor) {
    const auto count = checked_product(tensor.shape);
    if (!count || *count != tensor.data.size()) {
        throw TensorError(TensorErrc::shape_mismatch,
                          fmt::format("shape holds {} elements, data has {}", count.value_or(0), tensor.data.size()));
    }
    if (!tensor.meta.is_object()) throw TensorError(TensorErrc::bad_header_schema, "'meta' must be an object");
    const nlohmann::json header = {
        {"version", kTensorVersion}, {"dtype", "f32"}, {"shape", tensor.shape}, {"meta", tensor.meta}};
    const std::string header_text = header.dump();

    std::vector<std::uint8_t> out;
    out.reserve(kTensorMagic.size() + 4 + header_text.size() + 4 * tensor.data.size());
    out.insert(out.end(), kTensorMagic.begin(), kTensorMagic.end());
    store_u32_le(out, static_cast<std::uint32_t>(header_text.size()));
    out.insert(out.end(), header_text.begin(), header_text.end());
    for (float v : tensor.data) store_u32_le(out, std::bit_cast<std::uint32_t>(v));
    return out;
}

Tensor read_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw TensorError(TensorErrc::io, fmt::format("cannot open '{}'", path.string()));
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw TensorError(TensorErrc::io, fmt::format("read failure on '{}'", path.string()));
    try {
        return decode_tensor(bytes);
    } catch (const TensorError& e) {
        throw TensorError(e.code(), fmt::format("{}: {}", path.string(), e.what()));
    }
}

void write_tensor(const Tensor& tensor, const std::filesystem::path& path) {
    const std::vector<std::uint8_t> bytes = encode_tensor(tensor);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw TensorError(TensorErrc::io, fmt::format("cannot create '{}'", path.string()));
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw TensorError(TensorErrc::io, fmt::format("write failure on '{}'", path.string()));
}

}  // namespace cprobe
