#pragma once

#include <string>

#include "mcfbsde/errors.hpp"

namespace mcfbsde {

/// Sign family of the monotonicity condition.  thm2: the coupling functional
/// is decreasing and the linear part carries −c₂′G*Y, +c₂GX.  thm3: every sign
/// of the linear part is reversed.
enum class Mode { thm2, thm3 };

/// +1 for thm2, −1 for thm3.
inline constexpr double mode_sign(Mode m) noexcept { return m == Mode::thm2 ? 1.0 : -1.0; }

inline std::string to_string(Mode m) { return m == Mode::thm2 ? "THM2" : "THM3"; }

inline Mode parse_mode(const std::string& s) {
    if (s == "THM2" || s == "thm2") return Mode::thm2;
    if (s == "THM3" || s == "thm3") return Mode::thm3;
    throw ValidationError("unknown mode '" + s + "' (expected THM2 or THM3)");
}

}  // namespace mcfbsde
