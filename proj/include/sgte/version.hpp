#pragma once

namespace sgte {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace sgte
