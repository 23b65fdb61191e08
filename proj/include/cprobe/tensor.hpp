#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "cprobe/error.hpp"

namespace cprobe {

// Dense f32 tensor container:
//   bytes 0..7   magic "CPROBE01"
//   bytes 8..11  header length, u32 little-endian
//   header       UTF-8 JSON {"version":1,"dtype":"f32","shape":[...],"meta":{...}}
//   payload      row-major little-endian IEEE-754 binary32, 4 * prod(shape) bytes
inline constexpr std::string_view kTensorMagic = "CPROBE01";
inline constexpr int kTensorVersion = 1;
inline constexpr std::uint32_t kMaxTensorHeaderBytes = 64u << 20;

enum class TensorErrc {
    io,
    bad_magic,
    truncated_header,
    bad_header_json,
    bad_header_schema,
    unsupported_version,
    unsupported_dtype,
    truncated_payload,
    shape_mismatch,
};

std::string_view to_string(TensorErrc code) noexcept;

class TensorError : public InputError {
public:
    TensorError(TensorErrc code, const std::string& what);
    TensorErrc code() const noexcept { return code_; }

private:
    TensorErrc code_;
};

struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<float> data;
    nlohmann::json meta = nlohmann::json::object();

    std::size_t rank() const noexcept { return shape.size(); }
    std::size_t element_count() const noexcept;
};

// Decodes a container held in memory. Every malformed input maps to a TensorError.
Tensor decode_tensor(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_tensor(const Tensor& tensor);

Tensor read_tensor(const std::filesystem::path& path);
void write_tensor(const Tensor& tensor, const std::filesystem::path& path);

}  // namespace cprobe
