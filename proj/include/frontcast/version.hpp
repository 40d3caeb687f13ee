#pragma once

namespace frontcast {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace frontcast
