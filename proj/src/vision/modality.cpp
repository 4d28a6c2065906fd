#include "biofuse/modality.hpp"

#include "biofuse/errors.hpp"

namespace biofuse {

std::string_view to_string(Modality m) noexcept {
  switch (m) {
    case Modality::ecg: return "ecg";
    case Modality::face: return "face";
    case Modality::finger: return "finger";
  }
  return "?";
}

Modality parse_modality(std::string_view text) {
  for (auto m : kAllModalities)
    if (to_string(m) == text) return m;
  throw ParameterError("unknown modality '" + std::string(text) + "'");
}

ModalityMask ModalityMask::only(Modality m) {
  ModalityMask mask;
  mask.set(m, true);
  return mask;
}

ModalityMask ModalityMask::parse(std::string_view text) {
  ModalityMask mask;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto plus = text.find('+', start);
    const auto part = text.substr(start, plus == std::string_view::npos ? std::string_view::npos : plus - start);
    mask.set(parse_modality(part), true);
    if (plus == std::string_view::npos) break;
    start = plus + 1;
  }
  return mask;
}

bool ModalityMask::has(Modality m) const noexcept {
  switch (m) {
    case Modality::ecg: return ecg;
    case Modality::face: return face;
    case Modality::finger: return finger;
  }
  return false;
}

void ModalityMask::set(Modality m, bool on) noexcept {
  switch (m) {
    case Modality::ecg: ecg = on; break;
    case Modality::face: face = on; break;
    case Modality::finger: finger = on; break;
  }
}

std::string ModalityMask::label() const {
  std::string out;
  for (auto m : kAllModalities) {
    if (!has(m)) continue;
    if (!out.empty()) out += "+";
    out += to_string(m);
  }
  return out.empty() ? "none" : out;
}

std::vector<ModalityMask> nonempty_modality_subsets() {
  return {ModalityMask{true, false, false}, ModalityMask{false, true, false}, ModalityMask{false, false, true},
          ModalityMask{true, true, false},  ModalityMask{true, false, true},  ModalityMask{false, true, true},
          ModalityMask{true, true, true}};
}

}  // namespace biofuse
