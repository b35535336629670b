#pragma once

namespace mscrub {

inline constexpr const char* kVersion = "0.1.0";

} // namespace mscrub
