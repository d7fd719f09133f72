#include <algorithm>

#include "doctest.h"
#include "oracles.hpp"
#include "wmlab/spectral.hpp"

using namespace wmlab;

namespace {

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::vector<double> channel(const ImageBuffer& img, int c) { return {img.plane(c).begin(), img.plane(c).end()}; }

}  // namespace

TEST_CASE("dft2 matches the direct transform") {
  SeededRng rng(1);
  for (auto [h, w] : {std::pair{8, 8}, std::pair{6, 10}, std::pair{5, 7}}) {
    const ImageBuffer img = oracle::random_image(h, w, 1, rng);
    const SpectralPlane p = dft2(img.plane(0), h, w);
    const auto ref = oracle::naive_dft2(oracle::plane_complex(img, 0), h, w);
    for (std::size_t i = 0; i < ref.size(); ++i) {
      CHECK(std::abs(p.real[i] - ref[i].real()) < 1e-12);
      CHECK(std::abs(p.imag[i] - ref[i].imag()) < 1e-12);
    }
  }
}

TEST_CASE("dft2 of a constant is a single dc bin") {
  const int h = 12, w = 16;
  const std::vector<double> x(h * w, 0.37);
  const SpectralPlane p = dft2(x, h, w);
  CHECK(p.real[0] == doctest::Approx(0.37 * std::sqrt(h * w)).epsilon(1e-14));
  for (std::size_t i = 1; i < p.size(); ++i) {
    CHECK(std::abs(p.real[i]) < 1e-12);
    CHECK(std::abs(p.imag[i]) < 1e-12);
  }
  const std::vector<double> back = idft2(p);
  CHECK(max_diff(back, x) < 1e-12);

  SpectralPlane zero{h, w, std::vector<double>(h * w, 0.0), std::vector<double>(h * w, 0.0)};
  for (double v : idft2(zero)) CHECK(v == 0.0);
}

TEST_CASE("dft2 is linear and invertible") {
  SeededRng rng(2);
  const ImageBuffer a = oracle::random_image(16, 16, 1, rng), b = oracle::random_image(16, 16, 1, rng);
  std::vector<double> sum(256);
  for (int i = 0; i < 256; ++i) sum[i] = a.data()[i] + b.data()[i];
  const SpectralPlane pa = dft2(a.plane(0), 16, 16), pb = dft2(b.plane(0), 16, 16), ps = dft2(sum, 16, 16);
  for (int i = 0; i < 256; ++i) {
    CHECK(std::abs(ps.real[i] - pa.real[i] - pb.real[i]) < 1e-12);
    CHECK(std::abs(ps.imag[i] - pa.imag[i] - pb.imag[i]) < 1e-12);
  }
  CHECK(max_diff(idft2(pa), channel(a, 0)) < 1e-9);
}

TEST_CASE("idft2 rejects a spectrum that is not conjugate symmetric") {
  SpectralPlane p{4, 4, std::vector<double>(16, 0.0), std::vector<double>(16, 0.0)};
  p.imag[1] = 1.0;
  CHECK_THROWS_AS(idft2(p), Error);
}

TEST_CASE("decompose basic bins") {
  SpectralPlane p{1, 2, {3.0, 0.0}, {-4.0, 0.0}};
  const SpectralDecomp d = decompose(p);
  CHECK(d.amplitude[0] == doctest::Approx(5.0));
  CHECK(d.phase[0] == doctest::Approx(std::atan2(-4.0, 3.0)));
  CHECK(d.amplitude[1] == 0.0);
  CHECK(d.phase[1] == 0.0);
}

TEST_CASE("spectral roundtrips and parseval on 64x64") {
  SeededRng rng(3);
  for (int c : {1, 3}) {
    const ImageBuffer img = oracle::random_image(64, 64, c, rng);
    for (int k = 0; k < c; ++k) {
      const SpectralPlane p = dft2(img.plane(k), 64, 64);
      const SpectralPlane q = recompose(decompose(p));
      CHECK(max_diff(p.real, q.real) < 1e-9);
      CHECK(max_diff(p.imag, q.imag) < 1e-9);
      CHECK(max_diff(idft2(q), channel(img, k)) < 1e-9);
      double es = 0.0, ef = 0.0;
      for (double v : img.plane(k)) es += v * v;
      for (std::size_t i = 0; i < p.size(); ++i) ef += p.real[i] * p.real[i] + p.imag[i] * p.imag[i];
      CHECK(std::abs(es - ef) / es < 1e-8);
    }
  }
}

TEST_CASE("frequency mask geometry") {
  const FreqMask full = make_freq_mask(8, 8, 1.0);
  CHECK(full.count() == 64u);

  const FreqMask tiny = make_freq_mask(256, 256, 0.01);
  CHECK(tiny.count() == 9u);
  for (int u : {-1, 0, 1})
    for (int v : {-1, 0, 1}) CHECK(tiny.values[((u + 256) % 256) * 256 + (v + 256) % 256] == 1.0);

  const FreqMask half = make_freq_mask(16, 16, 0.5);
  CHECK(half.count() == 81u);

  for (auto [h, w, beta] : {std::tuple{16, 16, 0.5}, std::tuple{15, 9, 0.3}, std::tuple{64, 32, 0.6}}) {
    const FreqMask m = make_freq_mask(h, w, beta);
    for (int u = 0; u < h; ++u)
      for (int v = 0; v < w; ++v) CHECK(m.values[u * w + v] == m.values[((h - u) % h) * w + (w - v) % w]);
  }
  CHECK_THROWS_AS(make_freq_mask(8, 8, 0.0), Error);
  CHECK_THROWS_AS(make_freq_mask(8, 8, 1.5), Error);
}

TEST_CASE("fusion with an empty mask returns the forward image") {
  SeededRng rng(4);
  const ImageBuffer f = oracle::random_image(16, 12, 3, rng), r = oracle::random_image(16, 12, 3, rng);
  CHECK(max_abs_diff(fwm_fuse(f, r, zero_mask(16, 12)), f) < 1e-9);
  CHECK(max_abs_diff(fwm_fuse(f, f, make_freq_mask(16, 12, 0.6)), f) < 1e-9);
  CHECK_THROWS_AS(fwm_fuse(f, ImageBuffer(16, 12, 1), zero_mask(16, 12)), Error);
}

TEST_CASE("full mask against a flat forward image takes the reverse amplitude with zero phase") {
  SeededRng rng(5);
  const int h = 12, w = 10;
  const ImageBuffer f(h, w, 1, 0.5);
  const ImageBuffer r = oracle::random_image(h, w, 1, rng);
  const ImageBuffer out = fwm_fuse(f, r, make_freq_mask(h, w, 1.0));

  auto spec = oracle::naive_dft2(oracle::plane_complex(r, 0), h, w);
  for (auto& z : spec) z = std::abs(z);
  const auto back = oracle::naive_dft2(spec, h, w, true);
  for (int i = 0; i < h * w; ++i) CHECK(std::abs(out.data()[i] - back[i].real()) < 1e-9);
}

TEST_CASE("fusion phase is idempotent") {
  SeededRng rng(6);
  const ImageBuffer f = oracle::random_image(16, 16, 1, rng), r = oracle::random_image(16, 16, 1, rng);
  const FreqMask m = make_freq_mask(16, 16, 0.6);
  const ImageBuffer once = fwm_fuse(f, r, m);
  const ImageBuffer twice = fwm_fuse(f, once, m);
  const SpectralDecomp d1 = decompose(dft2(once.plane(0), 16, 16));
  const SpectralDecomp d2 = decompose(dft2(twice.plane(0), 16, 16));
  for (int i = 0; i < 256; ++i) {
    if (d1.amplitude[i] < 1e-9) continue;
    double dp = std::abs(d1.phase[i] - d2.phase[i]);
    dp = std::min(dp, 2.0 * std::numbers::pi - dp);
    CHECK(dp < 1e-9);
  }
}

TEST_CASE("growing the mask by one ring changes energy only inside that ring") {
  SeededRng rng(7);
  const int n = 16;
  const ImageBuffer f = oracle::random_image(n, n, 1, rng), r = oracle::random_image(n, n, 1, rng);
  const FreqMask small = make_freq_mask(n, n, 0.25), large = make_freq_mask(n, n, 0.375);
  const ImageBuffer a = fwm_fuse(f, r, small), b = fwm_fuse(f, r, large);
  const SpectralDecomp df = decompose(dft2(f.plane(0), n, n)), dr = decompose(dft2(r.plane(0), n, n));
  const SpectralPlane sa = dft2(a.plane(0), n, n), sb = dft2(b.plane(0), n, n);

  double ring = 0.0, ea = 0.0, eb = 0.0;
  for (int i = 0; i < n * n; ++i) {
    const bool in_ring = large.values[i] != small.values[i];
    const double diff = std::hypot(sa.real[i] - sb.real[i], sa.imag[i] - sb.imag[i]);
    if (!in_ring) CHECK(diff < 1e-12);
    if (in_ring) ring += df.amplitude[i] * df.amplitude[i] + dr.amplitude[i] * dr.amplitude[i];
  }
  for (double v : a.plane(0)) ea += v * v;
  for (double v : b.plane(0)) eb += v * v;
  CHECK(ring > 0.0);
  CHECK(std::abs(ea - eb) <= ring + 1e-12);
}

TEST_CASE("fusion backward matches a directional finite difference") {
  SeededRng rng(8);
  const ImageBuffer f = oracle::random_image(8, 8, 3, rng), r = oracle::random_image(8, 8, 3, rng);
  const ImageBuffer g = oracle::random_image(8, 8, 3, rng, -1.0, 1.0), d = oracle::random_image(8, 8, 3, rng, -1.0, 1.0);
  const FreqMask m = make_freq_mask(8, 8, 0.6);
  const ImageBuffer grad = fwm_fuse_backward(f, r, m, g);
  auto proj = [&](double s) {
    const ImageBuffer out = fwm_fuse(f, axpy(r, s, d), m);
    double acc = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) acc += out.data()[i] * g.data()[i];
    return acc;
  };
  const double h = 1e-5;
  const double numeric = (proj(h) - proj(-h)) / (2 * h);
  double analytic = 0.0;
  for (std::size_t i = 0; i < grad.size(); ++i) analytic += grad.data()[i] * d.data()[i];
  CHECK(analytic == doctest::Approx(numeric).epsilon(1e-6));
}

TEST_CASE("perturbation amplitude is linear in t") {
  const PerturbationSchedule s{0.0, 0.05, 1000};
  CHECK(perturbation_amplitude(s, 1000) == 0.05);
  CHECK(perturbation_amplitude(s, 0) == 0.0);
  CHECK(perturbation_amplitude(s, 500) == doctest::Approx(0.025).epsilon(1e-15));
  CHECK(perturbation_amplitude({0.01, 0.03, 10}, 5) == doctest::Approx(0.02));
  CHECK_THROWS_AS(perturbation_amplitude(s, 1001), Error);
  CHECK_THROWS_AS(perturbation_amplitude(s, -1), Error);
}

TEST_CASE("perturbation draws") {
  SeededRng rng(9);
  const ImageBuffer img = oracle::random_image(8, 8, 1, rng);
  CHECK(apply_perturbation(img, 0.0, rng) == img);

  SeededRng a(10), b(10);
  CHECK(apply_perturbation(img, 0.3, a) == apply_perturbation(img, 0.3, b));

  const ImageBuffer z = apply_perturbation(ImageBuffer(64, 64, 1), 1.0, rng);
  double m = 0.0, v = 0.0;
  for (double x : z.data()) m += x;
  m /= z.size();
  for (double x : z.data()) v += (x - m) * (x - m);
  v /= z.size() - 1;
  CHECK(v == doctest::Approx(1.0).epsilon(0.1));

  const ImageBuffer c = apply_perturbation(img, 0.2, rng, PerturbationMode::constant);
  for (std::size_t i = 0; i < img.size(); ++i) CHECK(c.data()[i] == doctest::Approx(img.data()[i] + 0.2));
  CHECK_THROWS_AS(apply_perturbation(img, -0.1, rng), Error);
}
