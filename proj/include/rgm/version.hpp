#pragma once

namespace rgm {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace rgm
