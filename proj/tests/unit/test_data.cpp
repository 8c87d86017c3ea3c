#include <doctest.h>

#include <png.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "helpers.hpp"
#include "sdmim/data.hpp"
#include "sdmim/image.hpp"

using namespace sdmim;

namespace {

void write_gray_png(const std::filesystem::path& path, std::size_t h, std::size_t w,
                    const std::vector<unsigned char>& bytes) {
  FILE* fp = std::fopen(path.string().c_str(), "wb");
  REQUIRE(fp);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t r = 0; r < h; ++r) png_write_row(png, bytes.data() + r * w);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("generator is deterministic and seed-sensitive") {
  const auto a = generate_synthetic(5, 64, 64, 3, 16);
  const auto b = generate_synthetic(5, 64, 64, 3, 16);
  const auto c = generate_synthetic(6, 64, 64, 3, 16);
  CHECK(a == b);
  CHECK(a[0].pixels != c[0].pixels);
  CHECK(a[0].pixels != a[1].pixels);
  CHECK(generate_synthetic(5, 64, 64, 0, 16).empty());
  // Image i does not depend on how many images are requested.
  CHECK(generate_synthetic(5, 64, 64, 1, 16)[0] == a[0]);
}

TEST_CASE("generated pixels and labels are in range") {
  for (const auto& img : generate_synthetic(9, 128, 128, 8, 16)) {
    CHECK(img.pixels.height == 128);
    CHECK(img.labels.rows == 8);
    CHECK(img.labels.cols == 8);
    for (float p : img.pixels.pixels) {
      CHECK(p >= 0.0f);
      CHECK(p <= 1.0f);
    }
    for (auto l : img.labels.labels) CHECK(l < kNumClasses);
  }
  CHECK_THROWS_AS(generate_synthetic(1, 100, 128, 1, 16), ShapeError);
}

TEST_CASE("class census over a thousand images") {
  std::array<std::size_t, kNumClasses> counts{};
  std::size_t total = 0;
  for (const auto& img : generate_synthetic(2024, 128, 128, 1000, 16))
    for (auto l : img.labels.labels) {
      ++counts[l];
      ++total;
    }
  const double tooth = static_cast<double>(counts[kTooth]) / total;
  CHECK(tooth >= 0.10);
  CHECK(tooth <= 0.60);
  for (std::size_t c = 0; c < kNumClasses; ++c) CHECK(counts[c] > 0);
  CHECK(counts[kBackground] > counts[kRestoration]);
}

TEST_CASE("derived seeds separate streams") {
  CHECK(derive_seed(1, 2, 3, 4) == derive_seed(1, 2, 3, 4));
  CHECK(derive_seed(1, 2, 3, 4) != derive_seed(1, 2, 4, 3));
  CHECK(derive_seed(1, 2) != derive_seed(2, 2));
  CHECK(derive_seed(0, 0) != derive_seed(0, 1));
}

TEST_CASE("pgm reads scale by the maximum value") {
  const auto dir = test::scratch_dir("pgm");
  {
    std::ofstream out(dir / "tiny.pgm", std::ios::binary);
    out << "P5\n# a comment\n2 2\n255\n";
    const unsigned char px[4] = {0, 255, 255, 0};
    out.write(reinterpret_cast<const char*>(px), 4);
  }
  const auto img = read_pgm(dir / "tiny.pgm");
  CHECK(img.height == 2);
  CHECK(img.width == 2);
  CHECK(img.pixels == std::vector<float>{0, 1, 1, 0});

  {
    std::ofstream out(dir / "deep.pgm", std::ios::binary);
    out << "P5 1 1 15\n";
    out.put(5);
  }
  CHECK(read_pgm(dir / "deep.pgm").pixels[0] == doctest::Approx(1.0 / 3.0));

  {
    std::ofstream out(dir / "short.pgm", std::ios::binary);
    out << "P5\n4 4\n255\nab";
  }
  CHECK_THROWS_AS(read_pgm(dir / "short.pgm"), IoError);
  CHECK_THROWS_AS(read_image(dir / "nothing.pgm"), IoError);
}

TEST_CASE("generated images survive a pgm round trip within one level") {
  const auto dir = test::scratch_dir("pgm_roundtrip");
  const auto img = generate_synthetic(3, 64, 64, 1, 16)[0];
  write_pgm(dir / "g.pgm", img.pixels);
  const auto back = read_image(dir / "g.pgm");
  REQUIRE(back.pixels.size() == img.pixels.pixels.size());
  for (std::size_t i = 0; i < back.pixels.size(); ++i)
    CHECK(std::abs(back.pixels[i] - img.pixels.pixels[i]) <= 1.0f / 255.0f);
}

TEST_CASE("png decoding") {
  const auto dir = test::scratch_dir("png");
  write_gray_png(dir / "g.png", 2, 3, {0, 51, 102, 153, 204, 255});
  const auto img = read_image(dir / "g.png");
  CHECK(img.height == 2);
  CHECK(img.width == 3);
  CHECK(img.at(0, 1) == doctest::Approx(0.2));
  CHECK(img.at(1, 2) == 1.0f);
}

TEST_CASE("bilinear resize") {
  GrayImage flat(5, 7, 0.3f);
  const auto big = resize_bilinear(flat, 16, 9);
  for (float p : big.pixels) CHECK(p == doctest::Approx(0.3f));
  const auto small = resize_bilinear(flat, 2, 2);
  for (float p : small.pixels) CHECK(p == doctest::Approx(0.3f));

  auto ramp = GrayImage(1, 4);
  for (std::size_t c = 0; c < 4; ++c) ramp.at(0, c) = static_cast<float>(c);
  const auto half = resize_bilinear(ramp, 1, 2);
  CHECK(half.at(0, 0) == doctest::Approx(0.5));
  CHECK(half.at(0, 1) == doctest::Approx(2.5));
}

TEST_CASE("folder loading resizes, sorts and skips junk") {
  const auto dir = test::scratch_dir("folder");
  write_pgm(dir / "b.pgm", GrayImage(8, 8, 0.5f));
  write_gray_png(dir / "a.png", 4, 4, std::vector<unsigned char>(16, 255));
  std::ofstream(dir / "c.pgm") << "garbage";
  std::ofstream(dir / "notes.txt") << "ignored";
  const auto images = load_folder(dir, 16, 16);
  REQUIRE(images.size() == 2);
  CHECK(images[0].pixels.at(5, 5) == 1.0f);
  CHECK(images[1].pixels.at(5, 5) == doctest::Approx(128.0 / 255.0));
  CHECK(images[0].labels.empty());

  CHECK_THROWS_AS(load_folder(test::scratch_dir("folder_empty"), 16, 16), IoError);
  CHECK_THROWS_AS(load_folder(dir / "missing", 16, 16), IoError);
}

TEST_CASE("flip is an involution on pixels and labels") {
  const auto img = generate_synthetic(4, 64, 64, 1, 16)[0];
  const auto once = flip_horizontal(img);
  CHECK(once.pixels.at(3, 0) == img.pixels.at(3, 63));
  CHECK(once.labels.at(1, 0) == img.labels.at(1, 3));
  CHECK(flip_horizontal(once) == img);
}

TEST_CASE("augmentation") {
  const auto img = generate_synthetic(4, 128, 128, 1, 16)[0];
  Rng rng(1);
  CHECK(augment(img, {0.0, 0.0}, rng) == img);

  Rng forced(2);
  CHECK(augment(img, {1.0, 0.0}, forced) == flip_horizontal(img));

  // Mid-grey so that clamping never bites: mean |noise| is the half-normal mean.
  LabeledImage grey{GrayImage(256, 256, 0.5f), {}, 0};
  Rng noisy(3);
  const auto out = augment(grey, {0.0, 0.02}, noisy);
  double mad = 0;
  for (float p : out.pixels.pixels) mad += std::abs(p - 0.5f);
  mad /= out.pixels.pixels.size();
  const double expected = 0.02 * std::sqrt(2.0 / std::numbers::pi);
  CHECK(std::abs(mad - expected) <= 0.2 * expected);
}

TEST_CASE("label csv round trip") {
  const auto dir = test::scratch_dir("labels");
  const auto img = generate_synthetic(8, 64, 128, 1, 16)[0];
  write_label_csv(dir / "l.csv", img.labels);
  CHECK(read_label_csv(dir / "l.csv") == img.labels);
  std::ofstream(dir / "bad.csv") << "0,1\n2\n";
  CHECK_THROWS_AS(read_label_csv(dir / "bad.csv"), IoError);
  std::ofstream(dir / "range.csv") << "0,9\n";
  CHECK_THROWS_AS(read_label_csv(dir / "range.csv"), IoError);
}

}
