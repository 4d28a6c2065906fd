#include "biofuse/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <string>

#include "biofuse/errors.hpp"

namespace biofuse {

namespace {

class PnmReader {
 public:
  explicit PnmReader(std::span<const unsigned char> bytes) : b_(bytes) {}

  std::size_t offset() const noexcept { return pos_; }

  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else if (std::isspace(b_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  unsigned long read_uint(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    unsigned long v = 0;
    while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
      v = v * 10 + (b_[pos_] - '0');
      if (v > 0xFFFFFFFFul) throw FormatError(std::string("PNM: ") + what + " too large", start);
      ++pos_;
    }
    if (pos_ == start) throw FormatError(std::string("PNM: expected ") + what, pos_);
    return v;
  }

  unsigned int read_binary_sample(unsigned long maxval) {
    if (maxval < 256) {
      if (pos_ >= b_.size()) throw FormatError("PNM: truncated raster", pos_);
      return b_[pos_++];
    }
    if (pos_ + 1 >= b_.size()) throw FormatError("PNM: truncated raster", pos_);
    const unsigned int v = (static_cast<unsigned int>(b_[pos_]) << 8) | b_[pos_ + 1];
    pos_ += 2;
    return v;
  }

  void skip_single_whitespace() {
    if (pos_ >= b_.size() || !std::isspace(b_[pos_])) throw FormatError("PNM: missing raster separator", pos_);
    ++pos_;
  }

 private:
  std::span<const unsigned char> b_;
  std::size_t pos_ = 0;
};

}  // namespace

Image decode_pnm(std::span<const unsigned char> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P') throw FormatError("PNM: missing magic number", 0);
  const char kind = static_cast<char>(bytes[1]);
  if (kind != '2' && kind != '3' && kind != '5' && kind != '6')
    throw FormatError(std::string("PNM: unsupported variant P") + kind, 1);
  const bool colour = kind == '3' || kind == '6';
  const bool binary = kind == '5' || kind == '6';

  PnmReader r(bytes.subspan(2));
  const auto width = r.read_uint("width");
  const auto height = r.read_uint("height");
  const auto maxval = r.read_uint("maxval");
  if (width == 0 || height == 0) throw FormatError("PNM: zero image dimension", r.offset() + 2);
  if (maxval == 0 || maxval > 65535) throw FormatError("PNM: maxval out of range", r.offset() + 2);
  if (binary) r.skip_single_whitespace();

  Image img(width, height);
  const double scale = 1.0 / static_cast<double>(maxval);
  const std::size_t channels = colour ? 3 : 1;
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    double ch[3] = {0, 0, 0};
    for (std::size_t c = 0; c < channels; ++c) {
      unsigned long v = 0;
      try {
        v = binary ? r.read_binary_sample(maxval) : r.read_uint("sample");
      } catch (const FormatError&) {
        throw FormatError("PNM: truncated raster at pixel " + std::to_string(i), r.offset() + 2);
      }
      if (v > maxval) throw FormatError("PNM: sample exceeds maxval", r.offset() + 2);
      ch[c] = static_cast<double>(v) * scale;
    }
    img.pixels[i] = colour ? std::clamp(0.299 * ch[0] + 0.587 * ch[1] + 0.114 * ch[2], 0.0, 1.0) : ch[0];
  }
  return img;
}

Image decode_csv_image(std::span<const unsigned char> bytes) {
  Image img;
  std::vector<double> row;
  std::string tok;
  std::size_t tok_start = 0;
  auto flush_token = [&](std::size_t at) {
    std::size_t a = 0, b = tok.size();
    while (a < b && std::isspace(static_cast<unsigned char>(tok[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(tok[b - 1]))) --b;
    const std::string t = tok.substr(a, b - a);
    tok.clear();
    if (t.empty()) throw FormatError("CSV image: empty cell", at);
    char* end = nullptr;
    const double v = std::strtod(t.c_str(), &end);
    if (end != t.c_str() + t.size()) throw FormatError("CSV image: bad value '" + t + "'", tok_start);
    if (!(v >= 0.0 && v <= 1.0)) throw FormatError("CSV image: value outside [0,1]", tok_start);
    row.push_back(v);
  };
  auto flush_row = [&](std::size_t at) {
    if (row.empty()) return;
    if (img.width == 0) img.width = row.size();
    if (row.size() != img.width) throw FormatError("CSV image: ragged row", at);
    img.pixels.insert(img.pixels.end(), row.begin(), row.end());
    ++img.height;
    row.clear();
  };

  bool line_has_content = false;
  for (std::size_t i = 0; i <= bytes.size(); ++i) {
    const char c = i < bytes.size() ? static_cast<char>(bytes[i]) : '\n';
    if (c == ',') {
      flush_token(i);
      tok_start = i + 1;
    } else if (c == '\n') {
      if (line_has_content) flush_token(i);
      flush_row(i);
      line_has_content = false;
      tok_start = i + 1;
    } else if (c != '\r') {
      if (!std::isspace(static_cast<unsigned char>(c))) line_has_content = true;
      tok.push_back(c);
    }
  }
  if (img.pixels.empty()) throw FormatError("CSV image: no pixels", 0);
  return img;
}

Image load_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open image: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    if (!bytes.empty() && bytes[0] == 'P') return decode_pnm(bytes);
    return decode_csv_image(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.offset());
  }
}

void write_pgm(const Image& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write image: " + path.string());
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  for (double v : img.pixels) {
    const auto byte = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    out.put(static_cast<char>(byte));
  }
}

namespace {

double sample_clamped(const Image& img, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  const auto x0 = static_cast<std::size_t>(x);
  const auto y0 = static_cast<std::size_t>(y);
  const std::size_t x1 = std::min(x0 + 1, img.width - 1);
  const std::size_t y1 = std::min(y0 + 1, img.height - 1);
  const double fx = x - static_cast<double>(x0), fy = y - static_cast<double>(y0);
  const double top = img.at(x0, y0) + fx * (img.at(x1, y0) - img.at(x0, y0));
  const double bot = img.at(x0, y1) + fx * (img.at(x1, y1) - img.at(x0, y1));
  return top + fy * (bot - top);
}

// Bilinear sample where everything outside the frame is black.
double sample_zero_fill(const Image& img, double x, double y) {
  const double fx0 = std::floor(x), fy0 = std::floor(y);
  const double fx = x - fx0, fy = y - fy0;
  const auto x0 = static_cast<long>(fx0), y0 = static_cast<long>(fy0);
  auto px = [&](long xi, long yi) -> double {
    if (xi < 0 || yi < 0 || xi >= static_cast<long>(img.width) || yi >= static_cast<long>(img.height)) return 0.0;
    return img.at(static_cast<std::size_t>(xi), static_cast<std::size_t>(yi));
  };
  double v = 0.0;
  if ((1 - fx) * (1 - fy) != 0.0) v += (1 - fx) * (1 - fy) * px(x0, y0);
  if (fx * (1 - fy) != 0.0) v += fx * (1 - fy) * px(x0 + 1, y0);
  if ((1 - fx) * fy != 0.0) v += (1 - fx) * fy * px(x0, y0 + 1);
  if (fx * fy != 0.0) v += fx * fy * px(x0 + 1, y0 + 1);
  return std::clamp(v, 0.0, 1.0);
}

}  // namespace

Image standardize(const Image& img, std::size_t target_w, std::size_t target_h) {
  if (target_w == 0 || target_h == 0) throw ParameterError("standardize: target size must be positive");
  if (img.width == target_w && img.height == target_h) return img;
  Image out(target_w, target_h);
  const double sx = static_cast<double>(img.width) / static_cast<double>(target_w);
  const double sy = static_cast<double>(img.height) / static_cast<double>(target_h);
  for (std::size_t v = 0; v < target_h; ++v)
    for (std::size_t u = 0; u < target_w; ++u)
      out.at(u, v) = sample_clamped(img, (static_cast<double>(u) + 0.5) * sx - 0.5, (static_cast<double>(v) + 0.5) * sy - 0.5);
  return out;
}

AugmentTransform draw_transform(const AugmentParams& p, std::mt19937_64& rng) {
  if (!(p.crop_fraction > 0.0 && p.crop_fraction <= 1.0))
    throw ParameterError("augment: crop_fraction must lie in (0,1], got " + std::to_string(p.crop_fraction));
  if (!(p.max_rotation_deg >= 0.0) || !(p.max_shift_px >= 0.0))
    throw ParameterError("augment: rotation and shift bounds must be non-negative");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto symmetric = [&](double bound) { return bound == 0.0 ? 0.0 : bound * (2.0 * unit(rng) - 1.0); };
  AugmentTransform t;
  t.rotation_deg = symmetric(p.max_rotation_deg);
  t.shift_x = symmetric(p.max_shift_px);
  t.shift_y = symmetric(p.max_shift_px);
  t.crop_fraction = p.crop_fraction;
  t.crop_u = unit(rng);
  t.crop_v = unit(rng);
  return t;
}

Image apply_transform(const Image& img, const AugmentTransform& t) {
  if (!(t.crop_fraction > 0.0 && t.crop_fraction <= 1.0))
    throw ParameterError("augment: crop_fraction must lie in (0,1]");
  const double w = static_cast<double>(img.width), h = static_cast<double>(img.height);
  const double side = std::sqrt(t.crop_fraction);
  const double cw = w * side, ch = h * side;
  const double ox = t.crop_u * (w - cw), oy = t.crop_v * (h - ch);
  const double cx = (w - 1.0) / 2.0, cy = (h - 1.0) / 2.0;
  const double rad = t.rotation_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);

  Image out(img.width, img.height);
  for (std::size_t v = 0; v < img.height; ++v) {
    for (std::size_t u = 0; u < img.width; ++u) {
      const double px = ox + (static_cast<double>(u) + 0.5) * (cw / w) - 0.5;
      const double py = oy + (static_cast<double>(v) + 0.5) * (ch / h) - 0.5;
      const double dx = px - cx - t.shift_x, dy = py - cy - t.shift_y;
      // inverse rotation
      const double sx = cs * dx + sn * dy + cx;
      const double sy = -sn * dx + cs * dy + cy;
      out.at(u, v) = sample_zero_fill(img, sx, sy);
    }
  }
  return out;
}

Image augment(const Image& img, const AugmentParams& params, std::mt19937_64& rng) {
  return apply_transform(img, draw_transform(params, rng));
}

Image pepper_noise(const Image& img, double fraction, std::mt19937_64& rng) {
  if (!(fraction >= 0.0 && fraction <= 1.0))
    throw ParameterError("pepper_noise: fraction must lie in [0,1], got " + std::to_string(fraction));
  const std::size_t n = img.pixels.size();
  const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  Image out = img;
  if (k == 0) return out;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::vector<std::size_t> pick;
  pick.reserve(k);
  std::sample(idx.begin(), idx.end(), std::back_inserter(pick), k, rng);
  for (auto i : pick) out.pixels[i] = 0.0;
  return out;
}

}  // namespace biofuse
