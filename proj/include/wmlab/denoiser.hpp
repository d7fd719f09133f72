#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "wmlab/autodiff.hpp"
#include "wmlab/image.hpp"
#include "wmlab/rng.hpp"

namespace wmlab {

/// Shape of the conditional encoder-decoder. The network sees 2C input
/// channels (noisy image and condition stacked) and predicts C channels.
struct ArchDescriptor {
  int channels = 3;
  int levels = 3;
  int base_width = 16;
  int kernel = 3;
  int groups = 4;
  int temb_dim = 64;
  /// Zero-initialized output convolution, so the untrained network predicts 0.
  bool zero_output = false;

  int width(int level) const { return base_width << level; }
  /// Patch sides must be multiples of this.
  int side_multiple() const { return 1 << (levels - 1); }
  void validate() const;

  friend bool operator==(const ArchDescriptor&, const ArchDescriptor&) = default;
};

/// Named parameter tensors in a fixed construction order.
struct DenoiserParams {
  ArchDescriptor arch;
  std::vector<std::string> names;
  std::vector<Tensor> tensors;

  std::size_t size() const { return tensors.size(); }
  std::size_t scalar_count() const;
  std::size_t index(const std::string& name) const;
  const Tensor& get(const std::string& name) const { return tensors[index(name)]; }
  Tensor& get(const std::string& name) { return tensors[index(name)]; }
  void check_finite() const;

  friend bool operator==(const DenoiserParams&, const DenoiserParams&) = default;
};

/// Kaiming fan-in normal weights; biases and norm offsets zero, norm scales one.
DenoiserParams init_params(const ArchDescriptor& arch, SeededRng& rng);

/// 64-dim style sinusoidal embedding of each timestep, [N, dim].
Tensor time_embedding(const std::vector<int>& t, int dim);

/// Parameters placed on a tape, aligned with DenoiserParams::tensors.
struct ParamVars {
  std::vector<Var> vars;
};

ParamVars bind_params(Tape& tape, const DenoiserParams& params, bool requires_grad = true);

/// Batched forward on the tape: noisy and cond are [N, C, H, W], one timestep per sample.
Var forward(Tape& tape, const ArchDescriptor& arch, const ParamVars& p, Var noisy, Var cond,
            const std::vector<int>& t);

/// Inference forward for one image; pure in params and inputs.
ImageBuffer forward(const DenoiserParams& params, const ImageBuffer& noisy, const ImageBuffer& cond,
                    int t);

/// Parameter gradients, aligned with DenoiserParams::tensors.
struct ParamGrads {
  std::vector<Tensor> tensors;
};

/// Reverse pass from `out` seeded with `loss_grad`, then collects parameter gradients.
ParamGrads backward(Tape& tape, const ParamVars& p, Var out, const Tensor& loss_grad);

/// Gradients already accumulated on the tape (zero for untouched parameters).
ParamGrads collect_grads(Tape& tape, const ParamVars& p);

struct AdamState {
  double lr = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

AdamState make_adam(const DenoiserParams& params, double lr);
void adam_step(DenoiserParams& params, const ParamGrads& grads, AdamState& state);

struct EmaState {
  double decay = 0.999;
  std::vector<Tensor> shadow;
};

EmaState make_ema(const DenoiserParams& params, double decay);
void ema_update(EmaState& ema, const DenoiserParams& params);
/// Copy of `params` with the shadow weights substituted.
DenoiserParams ema_params(const EmaState& ema, const DenoiserParams& params);

class FormatError : public Error {
 public:
  using Error::Error;
};

class VersionError : public Error {
 public:
  using Error::Error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  DenoiserParams params;
  std::optional<EmaState> ema;
  std::optional<AdamState> adam;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace wmlab
