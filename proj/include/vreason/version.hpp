#pragma once

namespace vreason {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace vreason
