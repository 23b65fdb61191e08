#include <filesystem>
#include <fstream>

#include "doctest.h"

#include "cprobe/tensor.hpp"
#include "tensor_fuzz.hpp"

using namespace cprobe;

namespace {

TensorErrc decode_error(std::span<const std::uint8_t> bytes) {
    try {
        decode_tensor(bytes);
    } catch (const TensorError& e) {
        return e.code();
    }
    FAIL("decode succeeded");
    return TensorErrc::io;
}

}  // namespace

TEST_CASE("2x3 round-trip is bit-identical") {
    Tensor t;
    t.shape = {2, 3};
    t.data = {1.0f, -2.5f, 0.0f, -0.0f, 3.25e-40f, INFINITY};
    t.meta["words"] = {"a", "b"};
    const auto bytes = encode_tensor(t);
    CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "CPROBE01");
    const auto back = decode_tensor(bytes);
    CHECK(fuzz::bit_equal(t, back));

    const auto path = std::filesystem::temp_directory_path() / "cprobe_unit_roundtrip.tns";
    write_tensor(t, path);
    CHECK(fuzz::bit_equal(t, read_tensor(path)));
    std::filesystem::remove(path);
}

TEST_CASE("payload layout is little-endian f32 after the header") {
    Tensor t;
    t.shape = {1};
    t.data = {1.0f};
    const auto bytes = encode_tensor(t);
    const std::uint32_t len = bytes[8] | bytes[9] << 8 | bytes[10] << 16 | bytes[11] << 24;
    REQUIRE(bytes.size() == 12 + len + 4);
    const auto header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + len);
    CHECK(header["version"] == 1);
    CHECK(header["dtype"] == "f32");
    CHECK(header["shape"] == nlohmann::json::array({1}));
    CHECK(bytes[12 + len + 0] == 0x00);
    CHECK(bytes[12 + len + 1] == 0x00);
    CHECK(bytes[12 + len + 2] == 0x80);
    CHECK(bytes[12 + len + 3] == 0x3f);
}

TEST_CASE("distinct error codes") {
    Tensor t;
    t.shape = {2, 2};
    t.data = {1, 2, 3, 4};
    auto good = encode_tensor(t);

    auto bad_magic = good;
    bad_magic[0] = 'X';
    CHECK(decode_error(bad_magic) == TensorErrc::bad_magic);

    auto truncated = good;
    truncated.pop_back();
    CHECK(decode_error(truncated) == TensorErrc::truncated_payload);

    auto extra = good;
    extra.push_back(0);
    CHECK(decode_error(extra) == TensorErrc::shape_mismatch);

    CHECK(decode_error(std::vector<std::uint8_t>(good.begin(), good.begin() + 10)) == TensorErrc::truncated_header);
    CHECK(decode_error(fuzz::with_header("{oops", 0, 5)) == TensorErrc::bad_header_json);
    CHECK(decode_error(fuzz::with_header(R"({"version":2,"dtype":"f32","shape":[]})", 4)) ==
          TensorErrc::unsupported_version);
    CHECK(decode_error(fuzz::with_header(R"({"version":1,"dtype":"f64","shape":[]})", 4)) ==
          TensorErrc::unsupported_dtype);
    CHECK(decode_error(fuzz::with_header(R"({"version":1,"dtype":"f32"})", 4)) == TensorErrc::bad_header_schema);

    Tensor wrong;
    wrong.shape = {3};
    wrong.data = {1};
    CHECK_THROWS_AS(encode_tensor(wrong), TensorError);
    CHECK_THROWS_AS(read_tensor("/nonexistent/x.tns"), TensorError);
}

TEST_CASE("fuzzed inputs yield decoded tensors or structured errors") {
    Rng rng(41);
    for (int i = 0; i < 2000; ++i) {
        const auto t = fuzz::random_tensor(rng);
        CHECK(fuzz::bit_equal(t, decode_tensor(encode_tensor(t))));

        const auto bytes = fuzz::random_input(rng);
        try {
            decode_tensor(bytes);
        } catch (const TensorError&) {
        }
    }
}
