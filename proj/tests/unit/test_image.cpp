#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "oracles.hpp"
#include "wmlab/image.hpp"
#include "wmlab/image_io.hpp"

using namespace wmlab;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* name) {
  const fs::path d = fs::temp_directory_path() / "wmlab_unit" / name;
  fs::create_directories(d);
  return d;
}

void write_bytes(const fs::path& p, const std::string& header, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << header;
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<char> read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("pgm bytes map to unit intensities") {
  const fs::path p = temp_dir("io") / "tiny.pgm";
  write_bytes(p, "P5\n2 2\n255\n", {0, 255, 128, 64});
  const ImageBuffer img = load_image(p);
  CHECK(img.height() == 2);
  CHECK(img.width() == 2);
  CHECK(img.channels() == 1);
  CHECK(img.at(0, 0, 0) == 0.0);
  CHECK(img.at(0, 0, 1) == 1.0);
  CHECK(img.at(0, 1, 0) == 128.0 / 255.0);
  CHECK(img.at(0, 1, 1) == 64.0 / 255.0);
}

TEST_CASE("pgm save-load roundtrip is byte identical") {
  SeededRng rng(11);
  std::vector<unsigned char> bytes(37 * 23);
  for (auto& b : bytes) b = static_cast<unsigned char>(rng.below(256));
  const fs::path dir = temp_dir("io");
  write_bytes(dir / "a.pgm", "P5\n37 23\n255\n", bytes);
  save_image(load_image(dir / "a.pgm"), dir / "b.pgm");
  CHECK(read_all(dir / "a.pgm") == read_all(dir / "b.pgm"));
}

TEST_CASE("png roundtrip preserves quantized rgb") {
  SeededRng rng(12);
  const ImageBuffer img = quantize8(oracle::random_image(256, 256, 3, rng));
  const fs::path p = temp_dir("io") / "rgb.png";
  save_image(img, p);
  const ImageBuffer back = load_image(p);
  CHECK(back.size() == 3u * 256 * 256);
  CHECK(back == img);
}

TEST_CASE("export quantization clamps and rounds half up") {
  CHECK(to_byte(0.5) == 128);
  CHECK(to_byte(1.7) == 255);
  CHECK(to_byte(-0.2) == 0);
  CHECK(to_byte(254.5 / 255.0) == 255);
  const fs::path p = temp_dir("io") / "q.pgm";
  save_image(ImageBuffer(1, 3, 1, std::vector<double>{0.5, 1.7, -0.2}), p);
  const ImageBuffer back = load_image(p);
  CHECK(back.at(0, 0, 0) == 128.0 / 255.0);
  CHECK(back.at(0, 0, 1) == 1.0);
  CHECK(back.at(0, 0, 2) == 0.0);
}

TEST_CASE("unsupported files are rejected") {
  const fs::path p = temp_dir("io") / "bad.pgm";
  write_bytes(p, "P5\n2 2\n65535\n", {0, 0, 0, 0, 0, 0, 0, 0});
  CHECK_THROWS_AS(load_image(p), Error);
  CHECK_THROWS_AS(load_image(temp_dir("io") / "missing.png"), Error);
}

TEST_CASE("crop indexing and identity") {
  ImageBuffer img(4, 4, 1);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) img.at(0, y, x) = 10 * y + x;
  CHECK(crop(img, {0, 0, 4}) == img);
  const ImageBuffer c = crop(img, {1, 1, 2});
  CHECK(c.at(0, 0, 0) == 11);
  CHECK(c.at(0, 0, 1) == 12);
  CHECK(c.at(0, 1, 0) == 21);
  CHECK(c.at(0, 1, 1) == 22);
  CHECK_THROWS_AS(crop(img, {3, 0, 2}), Error);

  const ImageBuffer flat(16, 16, 3, 0.25);
  CHECK(crop(flat, {0, 0, 5}) == crop(flat, {8, 9, 5}));
}

TEST_CASE("pasting a crop back leaves the image unchanged") {
  SeededRng rng(3);
  const ImageBuffer img = oracle::random_image(20, 17, 3, rng);
  ImageBuffer copy = img;
  const PatchRect r{4, 6, 9};
  paste(copy, crop(img, r), r);
  CHECK(copy == img);
}

TEST_CASE("random patch rects") {
  SeededRng a(7), b(7);
  CHECK(random_patch_rects(a, 2, 64, 128, 128) == random_patch_rects(b, 2, 64, 128, 128));

  SeededRng rng(1);
  for (const auto& r : random_patch_rects(rng, 5, 32, 32, 32)) CHECK(r == PatchRect{0, 0, 32});

  SeededRng big(99);
  const auto rects = random_patch_rects(big, 10000, 64, 256, 256);
  double mean = 0.0;
  for (const auto& r : rects) {
    CHECK(r.top >= 0);
    CHECK(r.top <= 192);
    mean += r.top;
  }
  mean /= rects.size();
  CHECK(mean == doctest::Approx(96.0).epsilon(3.0 / 96.0));
  CHECK_THROWS_AS(random_patch_rects(big, 1, 65, 64, 128), Error);
}

TEST_CASE("seeded generator is reproducible and streams are independent") {
  SeededRng a(5), b(5), c(6);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    CHECK(x != c.next_u64());
  }
  CHECK(SeededRng(5).derive(3).next_u64() == SeededRng(5).derive(3).next_u64());
  CHECK(SeededRng(5).derive(3).next_u64() != SeededRng(5).derive(4).next_u64());

  SeededRng n(8);
  double m = 0.0, v = 0.0;
  const int count = 200000;
  for (int i = 0; i < count; ++i) {
    const double z = n.normal();
    m += z;
    v += z * z;
  }
  m /= count;
  v = v / count - m * m;
  CHECK(std::abs(m) < 0.01);
  CHECK(v == doctest::Approx(1.0).epsilon(0.01));
}
