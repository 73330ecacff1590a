#pragma once

namespace dfp {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace dfp
