#pragma once

namespace stada {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace stada
