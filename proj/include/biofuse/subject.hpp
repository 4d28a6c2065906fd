#pragma once

#include <string>
#include <string_view>

namespace biofuse {

enum class Gender { male, female, unknown };

std::string_view to_string(Gender g) noexcept;
/// Accepts male/female/unknown and the single letters m/f/u (case-insensitive).
Gender parse_gender(std::string_view text);

/// Binary label used by the gender head: 0 = male, 1 = female.
int gender_label(Gender g);

}  // namespace biofuse
