#pragma once

#include <cstddef>
#include <cstdint>

#include "biofuse/dataset.hpp"

namespace biofuse::synth {

inline constexpr std::uint64_t kEcgStream = 11;
inline constexpr std::uint64_t kFaceStream = 12;
inline constexpr std::uint64_t kFingerStream = 13;

Image face_image(std::size_t subject, Gender g, const SynthOptions& opt, std::uint64_t seed, std::size_t index);
Image finger_image(std::size_t subject, const SynthOptions& opt, std::uint64_t seed, std::size_t index);

}  // namespace biofuse::synth
