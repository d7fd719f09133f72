#include "doctest.h"
#include "oracles.hpp"
#include "wmlab/diffusion.hpp"

using namespace wmlab;

TEST_CASE("linear schedule tables") {
  const NoiseSchedule s = linear_schedule(1000);
  CHECK(s.t_max() == 1000);
  CHECK(s.alpha_bar(0) == 1.0);
  CHECK(s.alpha_bar(1) == doctest::Approx(0.9999).epsilon(1e-15));
  CHECK(s.sigma_sq(1) == 0.0);

  long double prod = 1.0L;
  for (int t = 1; t <= 1000; ++t) {
    const long double beta = 1e-4L + (0.02L - 1e-4L) * (t - 1) / 999.0L;
    CHECK(s.beta(t) == doctest::Approx(static_cast<double>(beta)).epsilon(1e-13));
    prod *= 1.0L - beta;
    CHECK(s.alpha_bar(t) == doctest::Approx(static_cast<double>(prod)).epsilon(1e-12));
  }
  CHECK(s.alpha_bar(1000) == doctest::Approx(4.04e-5).epsilon(0.01));

  for (int t = 1; t <= 1000; ++t) {
    CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
    CHECK(s.beta(t) > 0.0);
    CHECK(s.beta(t) < 1.0);
    if (t > 1) CHECK(s.beta(t) >= s.beta(t - 1));
    const double brute = (1.0 - s.alpha_bar(t - 1)) / (1.0 - s.alpha_bar(t)) * s.beta(t);
    CHECK(std::abs(s.sigma_sq(t) - brute) <= 1e-15);
    CHECK(s.sigma_sq(t) >= 0.0);
    CHECK(s.sigma_sq(t) <= s.beta(t));
  }
  CHECK_THROWS_AS(linear_schedule(1000, 0.0, 0.02), Error);
  CHECK_THROWS_AS(linear_schedule(1000, 0.03, 0.02), Error);
  CHECK_THROWS_AS(linear_schedule(0), Error);
}

TEST_CASE("forward diffusion") {
  const NoiseSchedule s = linear_schedule(1000);
  SeededRng rng(1);
  const ImageBuffer img = oracle::random_image(8, 8, 3, rng);
  const ImageBuffer out = q_sample(img, 300, ImageBuffer(8, 8, 3), s);
  CHECK(max_abs_diff(out, scaled(img, std::sqrt(s.alpha_bar(300)))) == 0.0);

  const ImageBuffer noise = normal_image(8, 8, 3, rng);
  CHECK(max_abs_diff(q_sample(img, 1000, noise, s), noise) < 0.01);
  CHECK_THROWS_AS(q_sample(img, 1001, noise, s), Error);
  CHECK_THROWS_AS(q_sample(img, 0, noise, s), Error);

  const ImageBuffer big = oracle::random_image(320, 320, 1, rng);
  const ImageBuffer n2 = normal_image(320, 320, 1, rng);
  const ImageBuffer d = axpy(q_sample(big, 200, n2, s), -std::sqrt(s.alpha_bar(200)), big);
  double m = 0.0, v = 0.0;
  for (double x : d.data()) m += x;
  m /= d.size();
  for (double x : d.data()) v += (x - m) * (x - m);
  v /= d.size();
  CHECK(v == doctest::Approx(1.0 - s.alpha_bar(200)).epsilon(0.02));
}

TEST_CASE("clean image prediction inverts forward diffusion") {
  const NoiseSchedule s = linear_schedule(1000);
  SeededRng rng(2);
  for (int t : {1, 250, 999}) {
    const ImageBuffer img = oracle::random_image(16, 16, 3, rng);
    const ImageBuffer eps = normal_image(16, 16, 3, rng);
    CHECK(max_abs_diff(predict_x0(q_sample(img, t, eps, s), eps, t, s), img) < 1e-9);
  }
  const ImageBuffer img = oracle::random_image(4, 4, 1, rng);
  const ImageBuffer eps = normal_image(4, 4, 1, rng);
  CHECK(max_abs_diff(predict_x0(q_sample(img, 10, eps, s), eps, 10, s), img) < 1e-12);
  CHECK(max_abs_diff(predict_x0(img, ImageBuffer(4, 4, 1), 10, s), scaled(img, 1.0 / std::sqrt(s.alpha_bar(10)))) < 1e-15);
}

TEST_CASE("implicit step transports along the true noise") {
  const NoiseSchedule s = linear_schedule(1000);
  SeededRng rng(3);
  const ImageBuffer img = oracle::random_image(8, 8, 1, rng);
  const ImageBuffer eps = normal_image(8, 8, 1, rng);
  CHECK(max_abs_diff(ddim_step(q_sample(img, 700, eps, s), eps, 700, 300, s), q_sample(img, 300, eps, s)) < 1e-12);
  CHECK(max_abs_diff(ddim_step(q_sample(img, 700, eps, s), eps, 700, 0, s), img) < 1e-9);

  ImageBuffer x = q_sample(img, 999, eps, s);
  const std::vector<int> grid = {999, 500, 1, 0};
  for (std::size_t j = 0; j + 1 < grid.size(); ++j) {
    const double ab = s.alpha_bar(grid[j]);
    const ImageBuffer oracle_eps = scaled(axpy(x, -std::sqrt(ab), img), 1.0 / std::sqrt(1.0 - ab));
    x = ddim_step(x, oracle_eps, grid[j], grid[j + 1], s);
  }
  CHECK(max_abs_diff(x, img) < 1e-9);

  CHECK_THROWS_AS(ddim_step(img, eps, 300, 300, s), Error);
  CHECK_THROWS_AS(ddim_step(img, eps, 300, 500, s), Error);

  const auto [a, b] = ddim_coefficients(700, 300, s);
  const ImageBuffer y = q_sample(img, 700, eps, s);
  CHECK(max_abs_diff(ddim_step(y, eps, 700, 300, s), axpy(scaled(y, a), b, eps)) < 1e-14);
}

TEST_CASE("clipped implicit step") {
  const NoiseSchedule s = linear_schedule(1000);
  SeededRng rng(4);
  const ImageBuffer img = oracle::random_image(8, 8, 1, rng);
  const ImageBuffer eps = normal_image(8, 8, 1, rng);
  const ImageBuffer noisy = q_sample(img, 400, eps, s);
  CHECK(max_abs_diff(ddim_step_clipped(noisy, eps, 400, 100, s), ddim_step(noisy, eps, 400, 100, s)) < 1e-12);
  const ImageBuffer out = ddim_step_clipped(noisy, ImageBuffer(8, 8, 1), 400, 0, s, 0.0, 1.0);
  for (double v : out.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("ancestral mean and variance") {
  const NoiseSchedule s = linear_schedule(1000);
  SeededRng rng(5);
  const ImageBuffer img = oracle::random_image(8, 8, 3, rng);
  const ImageBuffer eps = normal_image(8, 8, 3, rng);
  const auto [mu, var] = reverse_mean_variance(q_sample(img, 1, eps, s), eps, 1, s);
  CHECK(max_abs_diff(mu, img) < 1e-9);
  CHECK(var == 0.0);
  const auto [mu0, var0] = reverse_mean_variance(img, ImageBuffer(8, 8, 3), 500, s);
  CHECK(max_abs_diff(mu0, scaled(img, 1.0 / std::sqrt(s.alpha(500)))) < 1e-14);
  CHECK(var0 == s.sigma_sq(500));
}

TEST_CASE("timestep grids") {
  const TimestepGrid g2 = timestep_grid(2, 1000);
  CHECK(g2.timesteps == std::vector<int>{1000, 1});
  CHECK(g2.transition(1) == std::pair{1, 0});

  const TimestepGrid g10 = timestep_grid(10, 1000);
  REQUIRE(g10.timesteps.size() == 10u);
  CHECK(g10.timesteps.front() == 1000);
  CHECK(g10.timesteps.back() == 1);
  for (std::size_t j = 1; j < 10; ++j) CHECK(g10.timesteps[j] < g10.timesteps[j - 1]);
  CHECK(g10.transition(9).second == 0);

  const TimestepGrid full = timestep_grid(50, 50);
  for (int j = 0; j < 50; ++j) CHECK(full.timesteps[j] == 50 - j);

  const TimestepGrid tr = timestep_grid(4, 1000, GridSpacing::training);
  CHECK(tr.timesteps == std::vector<int>{751, 501, 251, 1});

  CHECK_THROWS_AS(timestep_grid(1, 1000), Error);
  CHECK_THROWS_AS(timestep_grid(1001, 1000), Error);
}
