#pragma once

namespace oucr {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace oucr
