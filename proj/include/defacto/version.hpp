#pragma once

namespace defacto {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace defacto
