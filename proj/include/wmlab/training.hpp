#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "wmlab/denoiser.hpp"
#include "wmlab/diffusion.hpp"
#include "wmlab/losses.hpp"
#include "wmlab/sampler.hpp"

namespace wmlab {

struct TrainConfig {
  int transition_iter = 20000;  ///< K: stage 1 while iter <= K
  int total_iters = 22000;
  int batch_size = 1;  ///< image pairs per iteration
  int patches_per_image = 16;
  int patch_size = 64;
  int s_train = 4;
  GridSpacing spacing = GridSpacing::sampling;
  double mask_beta = 0.6;
  double l_min = 0.0;
  double l_max = 0.05;
  double lr = 2e-5;
  double stage2_lr = 0.0;  ///< 0 keeps lr
  double ema_decay = 0.999;
  std::uint64_t seed = 0;
  /// Denoiser calls recorded for backprop at the end of the stage-2 unroll.
  int window = 1;
  /// Clamp predicted clean images during the stage-2 rollout, as at inference.
  bool clip_x0 = true;
  /// 0 picks the largest count that fits the patch.
  int msssim_scales = 0;
  int checkpoint_every = 0;
  std::filesystem::path checkpoint_path;
  std::filesystem::path log_path;

  void validate() const;
  MsSsimOptions msssim() const;
};

struct LossReport {
  int iteration = 0;
  int stage = 1;
  double loss = 0.0;
  /// Refinement components; empty in stage 1.
  std::optional<double> l1;
  std::optional<double> msssim;

  std::string log_line() const;
};

/// Original / watermarked patch pairs for one step.
struct PatchBatch {
  std::vector<ImageBuffer> original;
  std::vector<ImageBuffer> watermarked;
};

/// Parameters, optimizer and EMA evolving together.
struct TrainState {
  DenoiserParams params;
  AdamState adam;
  EmaState ema;
};

TrainState make_train_state(DenoiserParams params, const TrainConfig& cfg);

/// Noise-estimation loss on the tape for a batch at timesteps `t` with noise `eps`.
/// Returns the [1] loss node.
Var noise_loss(Tape& tape, const TrainState& st, const ParamVars& p, const PatchBatch& batch,
               const std::vector<int>& t, const std::vector<ImageBuffer>& eps, const NoiseSchedule& sched);

LossReport stage1_step(const PatchBatch& batch, TrainState& st, const NoiseSchedule& sched,
                       SeededRng& rng);

/// L1 + MS-SSIM on the tape; the returned triple is (total, l1, msssim).
struct RefinementTerms {
  Var total, l1, msssim;
};
RefinementTerms refinement_loss(Tape& tape, Var a, Var b, const MsSsimOptions& opt);

/// Guided rollout of one pair with the final `window` denoiser calls recorded.
/// Returns the loss terms; parameter gradients are accumulated on `tape`.
RefinementTerms stage2_rollout(Tape& tape, const ParamVars& p, const DenoiserParams& params,
                               const ImageBuffer& original, const ImageBuffer& watermarked,
                               const NoiseSchedule& sched, const TrainConfig& cfg, SeededRng& rng,
                               std::vector<std::size_t>* recorded = nullptr);

LossReport stage2_step(const PatchBatch& batch, TrainState& st, const NoiseSchedule& sched,
                       const TrainConfig& cfg, SeededRng& rng);

/// Stage for a 1-based iteration counter.
inline int stage_for(int iter, int transition_iter) { return iter <= transition_iter ? 1 : 2; }

struct TrainResult {
  TrainState state;
  std::vector<LossReport> log;
};

/// Algorithm loop over a paired corpus. Emits the loss log and checkpoints when
/// the corresponding paths are set.
TrainResult train(const std::vector<std::pair<ImageBuffer, ImageBuffer>>& corpus, const TrainConfig& cfg,
                  DenoiserParams params, const NoiseSchedule& sched,
                  const std::function<void(const LossReport&)>& on_step = {});

/// Trailing n-point means; entry i averages xs[i .. i + n).
std::vector<double> moving_average(const std::vector<double>& xs, std::size_t n);

}  // namespace wmlab
