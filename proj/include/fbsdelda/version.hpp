#pragma once

namespace fbsdelda {

inline constexpr const char* kVersion = "0.1.0";

} // namespace fbsdelda
