#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "oracles.hpp"
#include "wmlab/attacks.hpp"
#include "wmlab/codecs.hpp"
#include "wmlab/harness.hpp"
#include "wmlab/image_io.hpp"
#include "wmlab/metrics.hpp"

using namespace wmlab;
namespace fs = std::filesystem;

namespace {

WatermarkBits filled(std::uint8_t v) {
  WatermarkBits wm;
  std::fill(wm.bits.begin(), wm.bits.end(), v);
  return wm;
}

std::vector<double> block_of(const std::vector<double>& y, int w, int top, int left) {
  std::vector<double> b(64);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) b[r * 8 + c] = y[(top + r) * w + left + c];
  return b;
}

}  // namespace

TEST_CASE("watermark files") {
  SeededRng rng(1);
  const WatermarkBits wm = WatermarkBits::random(rng);
  const fs::path dir = fs::temp_directory_path() / "wmlab_unit" / "wm";
  fs::create_directories(dir);
  save_watermark(wm, dir / "w.txt");
  CHECK(load_watermark(dir / "w.txt") == wm);

  ImageBuffer pgm(16, 16, 1);
  for (int i = 0; i < 256; ++i) pgm.data()[i] = wm.bits[i];
  save_image(pgm, dir / "w.pgm");
  CHECK(load_watermark(dir / "w.pgm") == wm);

  std::ofstream(dir / "bad.txt") << "0101\n";
  CHECK_THROWS_AS(load_watermark(dir / "bad.txt"), Error);
}

TEST_CASE("lsb sets the least significant bit") {
  const ImageBuffer img(16, 16, 1, 200.0 / 255.0);
  CodecConfig cfg;
  const ImageBuffer out = embed(img, filled(1), cfg);
  for (double v : out.data()) CHECK(to_byte(v) == 201);
  const ImageBuffer zero = embed(img, filled(0), cfg);
  for (double v : zero.data()) CHECK(to_byte(v) == 200);
}

TEST_CASE("codec roundtrips on random pairs") {
  SeededRng rng(2);
  for (CodecScheme s : {CodecScheme::lsb, CodecScheme::dct, CodecScheme::dft}) {
    CodecConfig cfg;
    cfg.scheme = s;
    for (int k = 0; k < 10; ++k) {
      cfg.key = k;
      const int channels = k % 2 ? 3 : 1;
      SeededRng img_rng = rng.derive(100 + k);
      const ImageBuffer img = quantize8(synth_image(128, channels, img_rng));
      const WatermarkBits wm = WatermarkBits::random(rng);
      const ImageBuffer marked = quantize8(embed(img, wm, cfg));
      INFO(to_string(s) << " pair " << k);
      CHECK(ber(wm, extract(marked, cfg)) == 0.0);
      CHECK(psnr(img, marked) >= (s == CodecScheme::lsb ? 48.13 : 40.0));
    }
  }
}

TEST_CASE("lsb distortion bound on 256x256") {
  SeededRng rng(3);
  const ImageBuffer img = quantize8(oracle::random_image(256, 256, 1, rng));
  const ImageBuffer marked = embed(img, WatermarkBits::random(rng), CodecConfig{});
  CHECK(psnr(img, marked) >= 48.13);
  CHECK(max_abs_diff(img, marked) <= 1.0 / 255.0 + 1e-12);
}

TEST_CASE("dct pair ordering matches a direct transform") {
  const ImageBuffer img(128, 128, 1, 0.5);
  CodecConfig cfg;
  cfg.scheme = CodecScheme::dct;
  for (std::uint8_t bit : {std::uint8_t{0}, std::uint8_t{1}}) {
    const ImageBuffer out = embed(img, filled(bit), cfg);
    const std::vector<double> y(out.data().begin(), out.data().end());
    for (int top = 0; top < 128; top += 8)
      for (int left = 0; left < 128; left += 8) {
        const auto b = block_of(y, 128, top, left);
        const double c1 = oracle::dct_coeff(b, 8, 2, 3), c2 = oracle::dct_coeff(b, 8, 3, 2);
        if (bit)
          CHECK(c1 >= c2 + cfg.dct_margin - 1e-12);
        else
          CHECK(c2 >= c1 + cfg.dct_margin - 1e-12);
      }
  }
}

TEST_CASE("dct block transform matches the direct sum") {
  SeededRng rng(4);
  std::vector<double> b(64);
  for (double& v : b) v = rng.uniform();
  const auto c = dct_block(b, 8);
  for (int u = 0; u < 8; ++u)
    for (int v = 0; v < 8; ++v) CHECK(c[u * 8 + v] == doctest::Approx(oracle::dct_coeff(b, 8, u, v)).epsilon(1e-12));
  const auto back = idct_block(c, 8);
  for (int i = 0; i < 64; ++i) CHECK(std::abs(back[i] - b[i]) < 1e-12);
}

TEST_CASE("dct extraction ignores a brightness offset") {
  SeededRng rng(5);
  CodecConfig cfg;
  cfg.scheme = CodecScheme::dct;
  cfg.key = 9;
  const ImageBuffer img = oracle::random_image(128, 128, 1, rng, 0.1, 0.8);
  const WatermarkBits wm = WatermarkBits::random(rng);
  const ImageBuffer marked = embed(img, wm, cfg);
  ImageBuffer brighter = marked;
  for (double& v : brighter.data()) v += 0.1;
  CHECK(extract(brighter, cfg) == extract(marked, cfg));
  CHECK(extract(brighter, cfg) == wm);
}

TEST_CASE("unwatermarked noise decodes to chance") {
  SeededRng rng(6);
  for (CodecScheme s : {CodecScheme::lsb, CodecScheme::dct, CodecScheme::dft}) {
    CodecConfig cfg;
    cfg.scheme = s;
    double total = 0.0;
    for (int k = 0; k < 50; ++k) total += ber(WatermarkBits::random(rng), extract(oracle::random_image(128, 128, 1, rng), cfg));
    INFO(to_string(s));
    CHECK(total / 50 == doctest::Approx(0.5).epsilon(0.14));
  }
}

TEST_CASE("codec capacity and tags") {
  CodecConfig cfg;
  cfg.scheme = CodecScheme::dct;
  CHECK_THROWS_AS(embed(ImageBuffer(64, 64, 1, 0.5), filled(1), cfg), Error);
  CHECK(parse_codec_scheme("dft") == CodecScheme::dft);
  CHECK_THROWS_AS(parse_codec_scheme("qphfm"), Error);
}

TEST_CASE("gaussian noise variance") {
  SeededRng rng(7);
  const ImageBuffer out = apply_attack(ImageBuffer(256, 256, 1, 0.5), {AttackMethod::gaussian, 0.002, 0}, rng);
  double m = 0.0, v = 0.0;
  for (double x : out.data()) m += x;
  m /= out.size();
  for (double x : out.data()) v += (x - m) * (x - m);
  v /= out.size() - 1;
  CHECK(v == doctest::Approx(0.002).epsilon(0.05));
}

TEST_CASE("attack outputs stay in range and are seeded") {
  SeededRng rng(8);
  const ImageBuffer img = oracle::random_image(32, 32, 3, rng);
  for (auto spec : {AttackSpec{AttackMethod::gaussian, 0.01, 3}, AttackSpec{AttackMethod::speckle, 0.05, 3},
                    AttackSpec{AttackMethod::saltpepper, 0.1, 3}, AttackSpec{AttackMethod::meanfilter, 3, 3},
                    AttackSpec{AttackMethod::jpeg, 30, 3}, AttackSpec{AttackMethod::identity, 0, 3}}) {
    const ImageBuffer a = apply_attack(img, spec), b = apply_attack(img, spec);
    CHECK(a == b);
    CHECK(a.same_shape(img));
    for (double v : a.data()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  CHECK(apply_attack(img, {AttackMethod::identity, 0, 0}) == img);
}

TEST_CASE("salt and pepper corrupts the requested fraction") {
  SeededRng rng(9);
  const ImageBuffer out = apply_attack(ImageBuffer(200, 200, 1, 0.5), {AttackMethod::saltpepper, 0.1, 0}, rng);
  int salt = 0, pepper = 0;
  for (double v : out.data()) {
    salt += v == 1.0;
    pepper += v == 0.0;
  }
  CHECK((salt + pepper) / 40000.0 == doctest::Approx(0.1).epsilon(0.1));
  CHECK(static_cast<double>(salt) / (salt + pepper) == doctest::Approx(0.5).epsilon(0.1));
}

TEST_CASE("mean filter") {
  const ImageBuffer flat(16, 16, 3, 0.3);
  CHECK(max_abs_diff(apply_attack(flat, {AttackMethod::meanfilter, 3, 0}), flat) < 1e-15);

  ImageBuffer impulse(16, 16, 1);
  impulse.at(0, 7, 8) = 0.9;
  const ImageBuffer f = apply_attack(impulse, {AttackMethod::meanfilter, 3, 0});
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      const bool near = std::abs(y - 7) <= 1 && std::abs(x - 8) <= 1;
      CHECK(f.at(0, y, x) == doctest::Approx(near ? 0.1 : 0.0));
    }
  ImageBuffer shifted(16, 16, 1);
  shifted.at(0, 9, 5) = 0.9;
  const ImageBuffer g = apply_attack(shifted, {AttackMethod::meanfilter, 3, 0});
  for (int y = 1; y < 14; ++y)
    for (int x = 4; x < 15; ++x) CHECK(g.at(0, y + 2, x - 3) == doctest::Approx(f.at(0, y, x)));

  ImageBuffer a(16, 16, 1), b(16, 16, 1);
  SeededRng rng(10);
  a = oracle::random_image(16, 16, 1, rng, 0.0, 0.4);
  b = oracle::random_image(16, 16, 1, rng, 0.0, 0.4);
  const AttackSpec box{AttackMethod::meanfilter, 5, 0};
  CHECK(max_abs_diff(apply_attack(axpy(a, 1.0, b), box), axpy(apply_attack(a, box), 1.0, apply_attack(b, box))) < 1e-12);
  CHECK_THROWS_AS(apply_attack(a, {AttackMethod::meanfilter, 4, 0}), Error);
}

TEST_CASE("jpeg tables") {
  const QuantTable base = {16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
                           14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
                           18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
                           49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};
  CHECK(jpeg_base_table() == base);
  CHECK(jpeg_quant_table(50) == base);
  for (int v : jpeg_quant_table(100)) CHECK(v == 1);
  const QuantTable q30 = jpeg_quant_table(30), q50 = jpeg_quant_table(50);
  for (int i = 0; i < 64; ++i) CHECK(q30[i] >= q50[i]);
  const QuantTable q10 = jpeg_quant_table(10);
  for (int i = 0; i < 64; ++i) CHECK(q10[i] == std::max(1, static_cast<int>(std::floor(base[i] * 500 / 100.0 + 0.5))));
  CHECK_THROWS_AS(jpeg_quant_table(0), Error);
  CHECK_THROWS_AS(jpeg_quant_table(101), Error);
}

TEST_CASE("jpeg at quality 100 is nearly lossless on a smooth gradient") {
  ImageBuffer img(64, 64, 1);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) img.at(0, y, x) = 0.1 + 0.8 * (x + y) / 126.0;
  CHECK(psnr(img, apply_attack(img, {AttackMethod::jpeg, 100, 0})) >= 45.0);
}

TEST_CASE("lsb error rises with noise strength") {
  const auto imgs = synth_corpus(50, 64, 12);
  const WatermarkBits wm = default_watermark(12);
  CodecConfig cfg;
  std::vector<double> bers;
  for (double var : {1e-6, 1e-5, 0.002}) {
    double total = 0.0;
    for (std::size_t i = 0; i < imgs.size(); ++i) {
      SeededRng rng = image_stream(12, i);
      total += ber(wm, extract(quantize8(apply_attack(quantize8(embed(imgs[i], wm, cfg)), {AttackMethod::gaussian, var, 0}, rng)), cfg));
    }
    bers.push_back(total / imgs.size());
  }
  CHECK(bers[0] <= bers[1]);
  CHECK(bers[1] <= bers[2]);
}

TEST_CASE("psnr") {
  SeededRng rng(13);
  const ImageBuffer a = oracle::random_image(16, 16, 3, rng, 0.2, 0.7);
  CHECK(psnr(a, a) == 99.0);
  ImageBuffer b = a;
  for (double& v : b.data()) v += 1.0 / 255.0;
  CHECK(psnr(a, b) == doctest::Approx(48.1308).epsilon(1e-5));
  CHECK(psnr(a, b) == psnr(b, a));
  ImageBuffer c = a;
  for (double& v : c.data()) v += 0.1;
  CHECK(psnr(a, c) == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(psnr(a, c) < psnr(a, b));
  CHECK_THROWS_AS(psnr(a, ImageBuffer(16, 16, 1)), Error);
  CHECK(psnr_on_bytes(a, quantize8(a)) == 99.0);
}

TEST_CASE("bit error rate") {
  SeededRng rng(14);
  const WatermarkBits w = WatermarkBits::random(rng);
  CHECK(ber(w, w) == 0.0);
  WatermarkBits inv = w;
  for (auto& b : inv.bits) b ^= 1;
  CHECK(ber(w, inv) == 1.0);
  WatermarkBits some = w;
  for (int i = 0; i < 82; ++i) some.bits[i * 3] ^= 1;
  CHECK(ber(w, some) == 0.3203125);
  CHECK(format_cell(45.26, ber(w, some)) == "45.26/0.3203");

  WatermarkBits pw = w, ps = some;
  std::reverse(pw.bits.begin(), pw.bits.end());
  std::reverse(ps.bits.begin(), ps.bits.end());
  CHECK(ber(pw, ps) == ber(w, some));
}

TEST_CASE("ssim") {
  SeededRng rng(15);
  const ImageBuffer a = oracle::random_image(24, 24, 3, rng), b = oracle::random_image(24, 24, 3, rng);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ssim(a, b) < 1.0);
  CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));
  CHECK(ssim(ImageBuffer(16, 16, 1, 0.0), ImageBuffer(16, 16, 1, 1.0)) == doctest::Approx(1e-4 / (1 + 1e-4)).epsilon(1e-12));
  CHECK_THROWS_AS(ssim(ImageBuffer(10, 10, 1), ImageBuffer(10, 10, 1)), Error);
}
