#include "wmlab/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace wmlab {

NoiseSchedule::NoiseSchedule(std::vector<double> betas) {
  if (betas.empty()) throw Error("NoiseSchedule: empty beta table");
  const std::size_t n = betas.size() + 1;
  beta_.assign(n, 0.0);
  alpha_.assign(n, 1.0);
  alpha_bar_.assign(n, 1.0);
  sigma_sq_.assign(n, 0.0);
  for (std::size_t t = 1; t < n; ++t) {
    const double b = betas[t - 1];
    if (!(b > 0.0 && b < 1.0)) throw Error("NoiseSchedule: beta must lie in (0, 1)");
    beta_[t] = b;
    alpha_[t] = 1.0 - b;
    alpha_bar_[t] = alpha_bar_[t - 1] * alpha_[t];
    sigma_sq_[t] = (1.0 - alpha_bar_[t - 1]) / (1.0 - alpha_bar_[t]) * b;
  }
}

void NoiseSchedule::check_step(int t, int lo) const {
  if (t < lo || t > t_max())
    throw Error("timestep " + std::to_string(t) + " outside [" + std::to_string(lo) + ", " +
                std::to_string(t_max()) + "]");
}

NoiseSchedule linear_schedule(int t_max, double beta_start, double beta_end) {
  if (t_max < 1) throw Error("linear_schedule: t_max must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw Error("linear_schedule: require 0 < beta_start <= beta_end < 1");
  std::vector<double> betas(t_max);
  for (int i = 0; i < t_max; ++i)
    betas[i] = t_max == 1 ? beta_start
                          : beta_start + (beta_end - beta_start) * i / static_cast<double>(t_max - 1);
  return NoiseSchedule(std::move(betas));
}

TimestepGrid timestep_grid(int s, int t_max, GridSpacing spacing) {
  if (s < 2 || s > t_max) throw Error("timestep_grid: require 2 <= s <= t_max");
  const long long divisor = spacing == GridSpacing::sampling ? s - 1 : s;
  TimestepGrid g{s, {}};
  for (long long j = s; j >= 1; --j) {
    // Integer floor keeps s == t_max equal to the full grid {T, ..., 1}.
    long long t = (j - 1) * t_max / divisor + 1;
    t = std::clamp<long long>(t, 1, t_max);
    if (g.timesteps.empty() || g.timesteps.back() != t) g.timesteps.push_back(static_cast<int>(t));
  }
  return g;
}

ImageBuffer q_sample(const ImageBuffer& img, int t, const ImageBuffer& noise,
                     const NoiseSchedule& sched) {
  require_same_shape(img, noise, "q_sample");
  sched.check_step(t);
  const double a = std::sqrt(sched.alpha_bar(t));
  const double b = std::sqrt(1.0 - sched.alpha_bar(t));
  ImageBuffer out = img;
  auto& d = out.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = a * img.data()[i] + b * noise.data()[i];
  return out;
}

ImageBuffer predict_x0(const ImageBuffer& noisy, const ImageBuffer& eps_hat, int t,
                       const NoiseSchedule& sched) {
  require_same_shape(noisy, eps_hat, "predict_x0");
  sched.check_step(t);
  const double s = std::sqrt(1.0 - sched.alpha_bar(t));
  const double r = std::sqrt(sched.alpha_bar(t));
  ImageBuffer out = noisy;
  auto& d = out.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = (noisy.data()[i] - s * eps_hat.data()[i]) / r;
  return out;
}

ImageBuffer ddim_step(const ImageBuffer& noisy, const ImageBuffer& eps_hat, int t, int t_next,
                      const NoiseSchedule& sched) {
  sched.check_step(t);
  sched.check_step(t_next, 0);
  if (t_next >= t) throw Error("ddim_step: t_next must be smaller than t");
  ImageBuffer out = predict_x0(noisy, eps_hat, t, sched);
  const double a = std::sqrt(sched.alpha_bar(t_next));
  const double b = std::sqrt(1.0 - sched.alpha_bar(t_next));
  auto& d = out.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = a * d[i] + b * eps_hat.data()[i];
  return out;
}

ImageBuffer ddim_step_clipped(const ImageBuffer& noisy, const ImageBuffer& eps_hat, int t, int t_next,
                              const NoiseSchedule& sched, double lo, double hi) {
  sched.check_step(t);
  sched.check_step(t_next, 0);
  if (t_next >= t) throw Error("ddim_step: t_next must be smaller than t");
  ImageBuffer out = predict_x0(noisy, eps_hat, t, sched);
  const double a = std::sqrt(sched.alpha_bar(t_next));
  const double b = std::sqrt(1.0 - sched.alpha_bar(t_next));
  auto& d = out.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = a * std::clamp(d[i], lo, hi) + b * eps_hat.data()[i];
  return out;
}

std::pair<double, double> ddim_coefficients(int t, int t_next, const NoiseSchedule& sched) {
  sched.check_step(t);
  sched.check_step(t_next, 0);
  const double r = std::sqrt(sched.alpha_bar(t));
  const double s = std::sqrt(1.0 - sched.alpha_bar(t));
  const double a = std::sqrt(sched.alpha_bar(t_next));
  const double b = std::sqrt(1.0 - sched.alpha_bar(t_next));
  return {a / r, b - a * s / r};
}

std::pair<ImageBuffer, double> reverse_mean_variance(const ImageBuffer& noisy,
                                                     const ImageBuffer& eps_hat, int t,
                                                     const NoiseSchedule& sched) {
  require_same_shape(noisy, eps_hat, "reverse_mean_variance");
  sched.check_step(t);
  const double coef = (1.0 - sched.alpha(t)) / std::sqrt(1.0 - sched.alpha_bar(t));
  const double r = std::sqrt(sched.alpha(t));
  ImageBuffer mean = noisy;
  auto& d = mean.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = (noisy.data()[i] - coef * eps_hat.data()[i]) / r;
  return {std::move(mean), sched.sigma_sq(t)};
}

}  // namespace wmlab
