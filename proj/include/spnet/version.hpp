#pragma once

namespace spnet {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace spnet
