#include "biofuse/subject.hpp"

#include <algorithm>
#include <cctype>

#include "biofuse/errors.hpp"

namespace biofuse {

std::string_view to_string(Gender g) noexcept {
  switch (g) {
    case Gender::male: return "male";
    case Gender::female: return "female";
    case Gender::unknown: break;
  }
  return "unknown";
}

Gender parse_gender(std::string_view text) {
  std::string s(text);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "male" || s == "m") return Gender::male;
  if (s == "female" || s == "f") return Gender::female;
  if (s == "unknown" || s == "u" || s.empty()) return Gender::unknown;
  throw ParameterError("unrecognised gender '" + std::string(text) + "'");
}

int gender_label(Gender g) {
  if (g == Gender::unknown) throw LabelError("gender label requested for a subject of unknown gender");
  return g == Gender::female ? 1 : 0;
}

}  // namespace biofuse
