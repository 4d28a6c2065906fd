#pragma once

#include <cstddef>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

namespace biofuse {

/// Grayscale image, row-major, pixels in [0, 1].
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, double fill = 0.0) : width(w), height(h), pixels(w * h, fill) {}

  double& at(std::size_t x, std::size_t y) noexcept { return pixels[y * width + x]; }
  double at(std::size_t x, std::size_t y) const noexcept { return pixels[y * width + x]; }

  friend bool operator==(const Image&, const Image&) = default;
};

// ---- ingestion ----
/// Decodes PGM (P2/P5) or PPM (P3/P6); colour is reduced with 0.299/0.587/0.114 weights.
Image decode_pnm(std::span<const unsigned char> bytes);
/// Comma-separated pixel grid, one image row per line, values already in [0, 1].
Image decode_csv_image(std::span<const unsigned char> bytes);
/// Dispatches on the file's magic number; anything not starting with 'P' is read as CSV.
Image load_image(const std::filesystem::path& path);
/// Writes an 8-bit binary PGM.
void write_pgm(const Image& img, const std::filesystem::path& path);

/// Bilinear resize using the pixel-centre convention; edges are clamped.
Image standardize(const Image& img, std::size_t target_w, std::size_t target_h);

struct AugmentParams {
  double max_rotation_deg = 10.0;
  double max_shift_px = 4.0;
  double crop_fraction = 0.9;  // area fraction kept by the random crop
};

/// One concrete draw of the augmentation.
struct AugmentTransform {
  double rotation_deg = 0.0;
  double shift_x = 0.0;
  double shift_y = 0.0;
  double crop_fraction = 1.0;
  double crop_u = 0.0;  // crop origin as a fraction of the free margin, in [0,1]
  double crop_v = 0.0;
};

AugmentTransform draw_transform(const AugmentParams& params, std::mt19937_64& rng);
/// Rotate about the centre, translate, crop, then resize back to the input size.
/// Pixels that fall outside the source frame are 0.
Image apply_transform(const Image& img, const AugmentTransform& t);
Image augment(const Image& img, const AugmentParams& params, std::mt19937_64& rng);

/// Forces exactly floor(fraction * N) distinct, uniformly chosen pixels to 0.
Image pepper_noise(const Image& img, double fraction, std::mt19937_64& rng);

}  // namespace biofuse
