#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace biofuse {

enum class Modality : std::size_t { ecg = 0, face = 1, finger = 2 };

inline constexpr std::size_t kModalityCount = 3;
inline constexpr std::array<Modality, kModalityCount> kAllModalities{Modality::ecg, Modality::face,
                                                                      Modality::finger};

std::string_view to_string(Modality m) noexcept;
Modality parse_modality(std::string_view text);

/// Which biometrics a sample (or an experiment cell) provides.
struct ModalityMask {
  bool ecg = false;
  bool face = false;
  bool finger = false;

  static constexpr ModalityMask all() { return {true, true, true}; }
  static ModalityMask only(Modality m);
  /// "ecg+face", "finger", ...; inverse of label().
  static ModalityMask parse(std::string_view text);

  bool has(Modality m) const noexcept;
  void set(Modality m, bool on) noexcept;
  bool any() const noexcept { return ecg || face || finger; }
  std::size_t count() const noexcept { return std::size_t{ecg} + face + finger; }
  ModalityMask operator&(ModalityMask o) const noexcept {
    return {ecg && o.ecg, face && o.face, finger && o.finger};
  }
  std::string label() const;

  friend bool operator==(const ModalityMask&, const ModalityMask&) = default;
};

/// The seven non-empty subsets in a fixed order: singles, pairs, then all three.
std::vector<ModalityMask> nonempty_modality_subsets();

/// A fixed-dimension embedding tagged with the modality it came from.
struct FeatureVector {
  Modality modality = Modality::ecg;
  std::vector<double> values;
};

}  // namespace biofuse
