#pragma once

namespace glyphnet {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace glyphnet
