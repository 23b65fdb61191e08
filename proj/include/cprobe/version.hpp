#pragma once

namespace cprobe {

inline constexpr const char* kEngineVersion = "1.0.0";

}  // namespace cprobe
