#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "biofuse/errors.hpp"
#include "biofuse/gradient_check.hpp"
#include "biofuse/image.hpp"
#include "biofuse/image_extractor.hpp"
#include "doctest.h"

using namespace biofuse;

namespace {

std::vector<unsigned char> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

Image random_image(std::size_t w, std::size_t h, std::mt19937_64& rng) {
  Image img(w, h);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& p : img.pixels) p = u(rng);
  return img;
}

}  // namespace

TEST_CASE("load_image decodes PGM and PPM") {
  const std::vector<double> expected{0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0};
  SUBCASE("ASCII P2") {
    auto img = decode_pnm(bytes_of("P2\n# comment\n2 2\n255\n0 255\n128 64\n"));
    CHECK(img.width == 2);
    CHECK(img.height == 2);
    CHECK(img.pixels == expected);
    CHECK(img.pixels[2] == doctest::Approx(0.50196).epsilon(1e-5));
    CHECK(img.pixels[3] == doctest::Approx(0.25098).epsilon(1e-5));
  }
  SUBCASE("binary P5 equals ASCII P2") {
    std::string p5 = "P5 2 2 255\n";
    p5 += static_cast<char>(0);
    p5 += static_cast<char>(255);
    p5 += static_cast<char>(128);
    p5 += static_cast<char>(64);
    CHECK(decode_pnm(bytes_of(p5)) == decode_pnm(bytes_of("P2 2 2 255 0 255 128 64")));
  }
  SUBCASE("16-bit binary") {
    std::string p5 = "P5 1 1 65535\n";
    p5 += static_cast<char>(0x80);
    p5 += static_cast<char>(0x00);
    CHECK(decode_pnm(bytes_of(p5)).pixels[0] == doctest::Approx(32768.0 / 65535.0));
  }
  SUBCASE("truncated raster reports an offset") {
    std::string p5 = "P5 2 2 255\n";
    p5 += static_cast<char>(1);
    try {
      decode_pnm(bytes_of(p5));
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(e.offset() >= 11);
    }
    CHECK_THROWS_AS(decode_pnm(bytes_of("P2 2 2 255 1 2 3")), FormatError);
    CHECK_THROWS_AS(decode_pnm(bytes_of("P7 1 1 255 0")), FormatError);
  }
  SUBCASE("PPM colour uses luminance weights") {
    auto img = decode_pnm(bytes_of("P3 1 1 255 255 0 0"));
    CHECK(img.pixels[0] == doctest::Approx(0.299));
    std::string p6 = "P6 1 1 255\n";
    p6 += static_cast<char>(0);
    p6 += static_cast<char>(255);
    p6 += static_cast<char>(0);
    CHECK(decode_pnm(bytes_of(p6)).pixels[0] == doctest::Approx(0.587));
  }
  SUBCASE("CSV grid") {
    auto img = decode_csv_image(bytes_of("0,0.5\n1, 0.25\n"));
    CHECK(img.width == 2);
    CHECK(img.height == 2);
    CHECK(img.pixels == std::vector<double>{0, 0.5, 1, 0.25});
    CHECK_THROWS_AS(decode_csv_image(bytes_of("0,0.5\n1\n")), FormatError);
    CHECK_THROWS_AS(decode_csv_image(bytes_of("0,2\n")), FormatError);
  }
  SUBCASE("files on disk, including the PGM writer") {
    const auto dir = std::filesystem::temp_directory_path() / "biofuse_test_vision";
    std::filesystem::create_directories(dir);
    Image img(3, 2);
    img.pixels = {0.0, 1.0, 0.2, 0.4, 0.6, 0.8};
    write_pgm(img, dir / "a.pgm");
    auto back = load_image(dir / "a.pgm");
    REQUIRE(back.width == 3);
    for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(back.pixels[i] - img.pixels[i]) <= 0.5 / 255.0 + 1e-12);
    {
      std::ofstream f(dir / "b.csv");
      f << "0.1,0.2\n0.3,0.4\n";
    }
    CHECK(load_image(dir / "b.csv").pixels == std::vector<double>{0.1, 0.2, 0.3, 0.4});
    std::filesystem::remove_all(dir);
  }
}

TEST_CASE("standardize") {
  std::mt19937_64 rng(1);
  auto img = random_image(7, 5, rng);
  CHECK(standardize(img, 7, 5) == img);

  Image four(2, 2);
  four.pixels = {0.1, 0.3, 0.5, 0.9};
  auto one = standardize(four, 1, 1);
  CHECK(one.pixels[0] == doctest::Approx((0.1 + 0.3 + 0.5 + 0.9) / 4.0).epsilon(1e-14));

  Image flat(9, 4, 0.37);
  for (auto [w, h] : {std::pair{3, 3}, std::pair{20, 11}, std::pair{1, 7}}) {
    auto s = standardize(flat, w, h);
    for (double p : s.pixels) CHECK(p == doctest::Approx(0.37).epsilon(1e-15));
  }
  CHECK_THROWS_AS(standardize(flat, 0, 3), ParameterError);
}

TEST_CASE("augment") {
  std::mt19937_64 rng(3);
  auto img = random_image(16, 16, rng);
  SUBCASE("no rotation, no shift, full crop is the identity") {
    std::mt19937_64 r(1);
    CHECK(augment(img, {0.0, 0.0, 1.0}, r) == img);
  }
  SUBCASE("pure translation moves an impulse") {
    Image imp(16, 16);
    imp.at(4, 7) = 1.0;
    AugmentTransform t;
    t.shift_x = 5.0;
    auto out = apply_transform(imp, t);
    CHECK(out.at(9, 7) == 1.0);
    double total = 0.0;
    for (double p : out.pixels) total += p;
    CHECK(total == 1.0);
  }
  SUBCASE("seeded determinism") {
    std::mt19937_64 a(77), b(77);
    CHECK(augment(img, {}, a) == augment(img, {}, b));
  }
  SUBCASE("dimensions and range are preserved") {
    std::mt19937_64 r(5);
    for (int i = 0; i < 50; ++i) {
      auto out = augment(img, {25.0, 6.0, 0.6}, r);
      CHECK(out.width == 16);
      CHECK(out.height == 16);
      for (double p : out.pixels) CHECK((p >= 0.0 && p <= 1.0));
    }
  }
  SUBCASE("crop fraction outside (0,1]") {
    std::mt19937_64 r(1);
    CHECK_THROWS_AS(augment(img, {0, 0, 0.0}, r), ParameterError);
    CHECK_THROWS_AS(augment(img, {0, 0, 1.5}, r), ParameterError);
  }
}

TEST_CASE("pepper_noise") {
  std::mt19937_64 rng(11);
  SUBCASE("5% of a 20x20 image") {
    Image ones(20, 20, 1.0);
    auto out = pepper_noise(ones, 0.05, rng);
    CHECK(std::count(out.pixels.begin(), out.pixels.end(), 0.0) == 20);
  }
  SUBCASE("fraction zero") {
    auto img = random_image(8, 8, rng);
    CHECK(pepper_noise(img, 0.0, rng) == img);
  }
  SUBCASE("97% of a 10x10 image") {
    Image ones(10, 10, 1.0);
    auto out = pepper_noise(ones, 0.97, rng);
    CHECK(std::count(out.pixels.begin(), out.pixels.end(), 0.0) == 97);
  }
  SUBCASE("exact count, zeros only, across fractions and sizes") {
    for (double f : {0.01, 0.05, 0.33, 0.5, 0.97, 1.0}) {
      for (std::size_t side : {7u, 32u, 64u}) {
        auto img = random_image(side, side, rng);
        for (auto& p : img.pixels) p = 0.5 + 0.5 * p;  // strictly positive
        auto out = pepper_noise(img, f, rng);
        std::size_t changed = 0;
        for (std::size_t i = 0; i < img.pixels.size(); ++i) {
          if (out.pixels[i] != img.pixels[i]) {
            ++changed;
            CHECK(out.pixels[i] == 0.0);
          }
        }
        CHECK(changed == static_cast<std::size_t>(std::floor(f * static_cast<double>(side * side))));
      }
    }
  }
  SUBCASE("bad fraction") { CHECK_THROWS_AS(pepper_noise(Image(2, 2), 1.1, rng), ParameterError); }
}

TEST_CASE("extractor pooling and projection") {
  std::mt19937_64 rng(7);
  ImageExtractorConfig cfg;
  cfg.input_size = 16;
  ImageExtractor ex(cfg, rng);

  SUBCASE("average pool of a constant map returns the constant") {
    Tensor m({1, 3, 4, 4});
    for (std::size_t c = 0; c < 3; ++c) std::fill_n(m.data() + c * 16, 16, 0.25 * static_cast<double>(c + 1));
    auto p = global_avg_pool(m);
    CHECK(p[0] == 0.25);
    CHECK(p[1] == 0.5);
    CHECK(p[2] == 0.75);
  }
  SUBCASE("pooled embedding equals loop mean of the final map") {
    auto img = random_image(16, 16, rng);
    const Image* one[] = {&img};
    ImageExtractor::Cache cache;
    auto pooled = ex.embed(images_to_tensor(one, 16), &cache);
    const Tensor& map = cache.activations.back();
    const std::size_t area = map.dim(2) * map.dim(3);
    for (std::size_t c = 0; c < map.dim(1); ++c) {
      double s = 0.0;
      for (std::size_t q = 0; q < area; ++q) s += map[c * area + q];
      CHECK(std::abs(pooled[c] - s / static_cast<double>(area)) < 1e-12);
    }
    auto fv = extract_features(img, ex, Modality::face);
    CHECK(fv.values.size() == 32);
    CHECK(fv.modality == Modality::face);
    for (std::size_t c = 0; c < 32; ++c) CHECK(fv.values[c] == pooled[c]);
  }
  SUBCASE("pooling is invariant to spatial permutations") {
    std::uniform_real_distribution<double> u(-1, 1);
    Tensor m({2, 4, 5, 3});
    for (auto& v : m.values()) v = u(rng);
    Tensor permuted = m;
    for (std::size_t bc = 0; bc < 8; ++bc) {
      std::span<double> plane(permuted.data() + bc * 15, 15);
      std::shuffle(plane.begin(), plane.end(), rng);
    }
    auto a = global_avg_pool(m), b = global_avg_pool(permuted);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-12);
  }
  SUBCASE("wrong input size") {
    Image big(20, 20);
    CHECK_THROWS_AS(extract_features(big, ex, Modality::face), DimensionError);
  }
  SUBCASE("projection examples") {
    LayerParams id(Tensor({3, 3}), Tensor({3}));
    for (std::size_t i = 0; i < 3; ++i) id.weights.at(i, i) = 1.0;
    FeatureVector raw{Modality::finger, {0.5, -2.0, 3.0}};
    CHECK(project(raw, id).values == raw.values);
    CHECK(project(raw, id).modality == Modality::finger);

    LayerParams zero(Tensor({3, 2}), Tensor({2}, std::vector<double>{1.5, -0.5}));
    CHECK(project(raw, zero).values == std::vector<double>{1.5, -0.5});

    auto p = init_dense(3, 4, rng);
    auto out = project(raw, p);
    for (std::size_t j = 0; j < 4; ++j) {
      double ref = p.bias[j];
      for (std::size_t k = 0; k < 3; ++k) ref += raw.values[k] * p.weights.at(k, j);
      CHECK(std::abs(out.values[j] - ref) < 1e-12);
    }
    CHECK_THROWS_AS(project(FeatureVector{Modality::face, {1.0}}, p), DimensionError);
  }
}

TEST_CASE("extractor backward matches finite differences") {
  std::mt19937_64 rng(12);
  ImageExtractorConfig cfg;
  cfg.input_size = 8;
  cfg.channels = {2, 3, 4};
  cfg.feature_dim = 5;
  ImageExtractor ex(cfg, rng);
  for (auto& c : ex.convs)
    for (auto& b : c.bias.values()) b = 0.05;
  std::vector<Image> imgs{random_image(8, 8, rng), random_image(8, 8, rng)};
  const Image* ptrs[] = {&imgs[0], &imgs[1]};
  const Tensor x = images_to_tensor(ptrs, 8);
  Tensor r({2, 5});
  std::normal_distribution<double> d(0.0, 1.0);
  for (auto& v : r.values()) v = d(rng);
  auto objective = [&] {
    const Tensor y = ex.forward(x);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
    return s;
  };
  ImageExtractor::Cache cache;
  ex.forward(x, &cache);
  ex.zero_grad();
  ex.backward(cache, r);
  std::vector<ParamView> views;
  ex.append_params(views, "face");
  std::vector<GradProbe> probes;
  for (auto& v : views) probes.push_back({v.name, v.value, v.grad});
  auto rep = gradient_check(objective, probes);
  CHECK(rep.checked > 50);
  CHECK(rep.max_rel_error < 1e-6);
}
