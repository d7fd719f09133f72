#pragma once

#include <utility>
#include <vector>

#include "wmlab/image.hpp"

namespace wmlab {

/// Variance tables over T steps. Index t runs 0..T; entry 0 is the clean state
/// (alpha_bar(0) = 1, beta(0) = 0).
class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  explicit NoiseSchedule(std::vector<double> betas);

  int t_max() const { return static_cast<int>(beta_.size()) - 1; }
  double beta(int t) const { return beta_.at(t); }
  double alpha(int t) const { return alpha_.at(t); }
  double alpha_bar(int t) const { return alpha_bar_.at(t); }
  double sigma_sq(int t) const { return sigma_sq_.at(t); }

  void check_step(int t, int lo = 1) const;

 private:
  std::vector<double> beta_;
  std::vector<double> alpha_;
  std::vector<double> alpha_bar_;
  std::vector<double> sigma_sq_;
};

NoiseSchedule linear_schedule(int t_max, double beta_start = 1e-4, double beta_end = 0.02);

/// Descending sampling timesteps; each entry transitions to the next one and
/// the last transitions to 0.
struct TimestepGrid {
  int s = 0;
  std::vector<int> timesteps;

  /// (t, t_next) for transition j, with t_next = 0 for the last entry.
  std::pair<int, int> transition(std::size_t j) const {
    return {timesteps[j], j + 1 < timesteps.size() ? timesteps[j + 1] : 0};
  }
  std::size_t transitions() const { return timesteps.size(); }
};

enum class GridSpacing {
  sampling,  ///< t_j = (j - 1) * T / (S - 1) + 1
  training,  ///< t_j = (j - 1) * T / S + 1
};

TimestepGrid timestep_grid(int s, int t_max, GridSpacing spacing = GridSpacing::sampling);

ImageBuffer q_sample(const ImageBuffer& img, int t, const ImageBuffer& noise,
                     const NoiseSchedule& sched);

ImageBuffer predict_x0(const ImageBuffer& noisy, const ImageBuffer& eps_hat, int t,
                       const NoiseSchedule& sched);

/// Deterministic implicit update from t to t_next (t_next may be 0).
ImageBuffer ddim_step(const ImageBuffer& noisy, const ImageBuffer& eps_hat, int t, int t_next,
                      const NoiseSchedule& sched);

/// ddim_step with the predicted clean image clamped to [lo, hi] before re-noising.
ImageBuffer ddim_step_clipped(const ImageBuffer& noisy, const ImageBuffer& eps_hat, int t, int t_next,
                              const NoiseSchedule& sched, double lo = 0.0, double hi = 1.0);

/// Coefficients (a, b) with ddim_step = a * noisy + b * eps_hat.
std::pair<double, double> ddim_coefficients(int t, int t_next, const NoiseSchedule& sched);

/// Posterior mean of the ancestral step and its variance sigma_t^2.
std::pair<ImageBuffer, double> reverse_mean_variance(const ImageBuffer& noisy,
                                                     const ImageBuffer& eps_hat, int t,
                                                     const NoiseSchedule& sched);

}  // namespace wmlab
