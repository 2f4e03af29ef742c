#pragma once

namespace gibbsnet {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace gibbsnet
