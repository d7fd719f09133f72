#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "wmlab/autodiff.hpp"
#include "wmlab/diffusion.hpp"
#include "wmlab/image.hpp"
#include "wmlab/rng.hpp"
#include "wmlab/spectral.hpp"

namespace wmlab {

/// eps_theta(noisy, cond, t) on one patch. Must be pure for a fixed parameter set.
using NoiseEstimator =
    std::function<ImageBuffer(const ImageBuffer& noisy, const ImageBuffer& cond, int t)>;

/// Deterministic overlapping tiling of an H x W frame.
struct PatchGrid {
  int height = 0;
  int width = 0;
  int patch = 0;
  int stride = 0;
  std::vector<PatchRect> rects;

  std::size_t n() const { return rects.size(); }
};

/// Positions 0, r, 2r, ... per axis plus a final position clamped to H - p.
PatchGrid build_grid(int height, int width, int patch, int stride);

/// Number of rects covering each pixel (row-major, one plane).
std::vector<int> coverage(const PatchGrid& grid);

/// Averages per-patch noise estimates over overlapping pixels.
ImageBuffer aggregate_noise(const ImageBuffer& noisy, const ImageBuffer& cond, const PatchGrid& grid,
                            int t, const NoiseEstimator& denoiser);

/// Frequency guidance applied after each implicit step.
struct Guidance {
  FreqMask mask;
  PerturbationSchedule perturbation;
  PerturbationMode mode = PerturbationMode::gaussian;
  /// Clock fed to L(t): the diffusion timestep, or the 1-based sampling index
  /// (S for the first transition, 1 for the last).
  enum class Clock { timestep, sampling_index } clock = Clock::timestep;
  /// Clamp the predicted clean image to [0, 1] inside each implicit step.
  bool clip_x0 = false;
};

struct SampleOptions {
  /// Forward-diffused `cond` serves as the forward branch of the frequency
  /// fusion at every transition (inference-time modulation).
  const Guidance* guidance = nullptr;
  /// Clamp each predicted clean image to [0, 1] inside the implicit step.
  bool clip_x0 = false;
};

/// Patch-aggregated implicit sampling from Gaussian noise, conditioned on `cond`.
ImageBuffer sample(const ImageBuffer& cond, const NoiseEstimator& denoiser, const NoiseSchedule& sched,
                   const PatchGrid& grid, const TimestepGrid& ts, SeededRng& rng,
                   const SampleOptions& opt = {});

/// Single-patch rollout with the forward branch built from `original`:
/// implicit step, amplitude fusion against q_sample(original, t_next, fresh noise),
/// then the L(t) perturbation.
ImageBuffer guided_sample(const ImageBuffer& original, const ImageBuffer& cond,
                          const NoiseEstimator& denoiser, const NoiseSchedule& sched,
                          const TimestepGrid& ts, const FreqMask& mask,
                          const PerturbationSchedule& pert, SeededRng& rng,
                          PerturbationMode mode = PerturbationMode::gaussian);

/// Noise estimate on the tape for transition `index` (0-based) of a rollout.
using TapeEstimator = std::function<Var(Tape& tape, Var noisy, int t, std::size_t index)>;

/// The guided rollout recorded on a tape. `guided_sample` is this function with
/// an estimator that pushes constants; training passes one that records the
/// network for the final transitions.
Var guided_rollout(Tape& tape, const ImageBuffer& original, const NoiseSchedule& sched,
                   const TimestepGrid& ts, const Guidance& guidance, SeededRng& rng,
                   const TapeEstimator& estimator);

namespace ops {

/// Tape form of ddim_step; the forward pass calls ddim_step itself.
Var ddim_step(Tape& tape, Var noisy, Var eps, int t, int t_next, const NoiseSchedule& sched);
/// Tape form of ddim_step_clipped on [0, 1]; zero gradient through clamped pixels.
Var ddim_step_clipped(Tape& tape, Var noisy, Var eps, int t, int t_next, const NoiseSchedule& sched);

/// Tape form of fwm_fuse, differentiable in `reverse`; `forward_img` is a constant.
Var fwm_fuse(Tape& tape, const ImageBuffer& forward_img, Var reverse, const FreqMask& mask);

}  // namespace ops

}  // namespace wmlab
