#include "wmlab/sampler.hpp"

#include <algorithm>
#include <string>

namespace wmlab {

namespace {

std::vector<int> axis_positions(int extent, int patch, int stride) {
  std::vector<int> pos;
  for (int p = 0; p + patch <= extent; p += stride) pos.push_back(p);
  if (pos.back() != extent - patch) pos.push_back(extent - patch);
  return pos;
}

double clock_amplitude(const Guidance& g, int t, std::size_t j, std::size_t transitions) {
  const int tick =
      g.clock == Guidance::Clock::timestep ? t : static_cast<int>(transitions - j);
  return perturbation_amplitude(g.perturbation, tick);
}

}  // namespace

PatchGrid build_grid(int height, int width, int patch, int stride) {
  if (patch < 1 || patch > std::min(height, width))
    throw Error("build_grid: patch " + std::to_string(patch) + " does not fit a " +
                std::to_string(height) + "x" + std::to_string(width) + " frame");
  if (stride < 1 || stride > patch) throw Error("build_grid: stride must be in [1, patch]");
  PatchGrid g{height, width, patch, stride, {}};
  const auto ys = axis_positions(height, patch, stride);
  const auto xs = axis_positions(width, patch, stride);
  for (int y : ys)
    for (int x : xs) g.rects.push_back({y, x, patch});
  return g;
}

std::vector<int> coverage(const PatchGrid& grid) {
  std::vector<int> k(static_cast<std::size_t>(grid.height) * grid.width, 0);
  for (const auto& r : grid.rects)
    for (int y = r.top; y < r.top + r.size; ++y)
      for (int x = r.left; x < r.left + r.size; ++x) ++k[static_cast<std::size_t>(y) * grid.width + x];
  return k;
}

ImageBuffer aggregate_noise(const ImageBuffer& noisy, const ImageBuffer& cond, const PatchGrid& grid,
                            int t, const NoiseEstimator& denoiser) {
  require_same_shape(noisy, cond, "aggregate_noise");
  if (noisy.height() != grid.height || noisy.width() != grid.width)
    throw Error("aggregate_noise: grid does not match the image");
  ImageBuffer sum(noisy.height(), noisy.width(), noisy.channels());
  for (const auto& r : grid.rects) {
    const ImageBuffer eps = denoiser(crop(noisy, r), crop(cond, r), t);
    if (eps.height() != r.size || eps.width() != r.size || eps.channels() != noisy.channels())
      throw Error("aggregate_noise: denoiser returned a mis-shaped patch");
    for (int c = 0; c < noisy.channels(); ++c)
      for (int y = 0; y < r.size; ++y)
        for (int x = 0; x < r.size; ++x) sum.at(c, r.top + y, r.left + x) += eps.at(c, y, x);
  }
  const auto k = coverage(grid);
  for (int c = 0; c < sum.channels(); ++c) {
    auto plane = sum.plane(c);
    for (std::size_t i = 0; i < plane.size(); ++i) {
      if (k[i] == 0) throw Error("aggregate_noise: pixel left uncovered by the grid");
      plane[i] /= k[i];
    }
  }
  return sum;
}

ImageBuffer sample(const ImageBuffer& cond, const NoiseEstimator& denoiser, const NoiseSchedule& sched,
                   const PatchGrid& grid, const TimestepGrid& ts, SeededRng& rng,
                   const SampleOptions& opt) {
  const Guidance* guidance = opt.guidance;
  ImageBuffer x = normal_image(cond.height(), cond.width(), cond.channels(), rng);
  for (std::size_t j = 0; j < ts.transitions(); ++j) {
    const auto [t, tn] = ts.transition(j);
    const ImageBuffer eps = aggregate_noise(x, cond, grid, t, denoiser);
    const bool clip = opt.clip_x0 || (guidance && guidance->clip_x0);
    x = clip ? ddim_step_clipped(x, eps, t, tn, sched) : ddim_step(x, eps, t, tn, sched);
    if (!guidance) continue;
    const ImageBuffer fwd =
        tn > 0 ? q_sample(cond, tn, normal_image(cond.height(), cond.width(), cond.channels(), rng), sched)
               : cond;
    x = fwm_fuse(fwd, x, guidance->mask);
    x = apply_perturbation(x, clock_amplitude(*guidance, t, j, ts.transitions()), rng, guidance->mode);
  }
  return x;
}

Var guided_rollout(Tape& tape, const ImageBuffer& original, const NoiseSchedule& sched,
                   const TimestepGrid& ts, const Guidance& guidance, SeededRng& rng,
                   const TapeEstimator& estimator) {
  const int h = original.height(), w = original.width(), ch = original.channels();
  Var x = tape.constant(to_tensor(normal_image(h, w, ch, rng)));
  for (std::size_t j = 0; j < ts.transitions(); ++j) {
    const auto [t, tn] = ts.transition(j);
    const Var eps = estimator(tape, x, t, j);
    x = guidance.clip_x0 ? ops::ddim_step_clipped(tape, x, eps, t, tn, sched) : ops::ddim_step(tape, x, eps, t, tn, sched);
    const ImageBuffer fwd =
        tn > 0 ? q_sample(original, tn, normal_image(h, w, ch, rng), sched) : original;
    x = ops::fwm_fuse(tape, fwd, x, guidance.mask);
    const double amp = clock_amplitude(guidance, t, j, ts.transitions());
    if (amp < 0.0) throw Error("guided_rollout: negative perturbation amplitude");
    if (guidance.mode == PerturbationMode::constant) {
      x = ops::add_scalar(tape, x, amp);
    } else {
      Tensor z({1, ch, h, w});
      for (double& v : z.data) v = amp * rng.normal();
      x = ops::add(tape, x, tape.constant(std::move(z)));
    }
  }
  return x;
}

ImageBuffer guided_sample(const ImageBuffer& original, const ImageBuffer& cond,
                          const NoiseEstimator& denoiser, const NoiseSchedule& sched,
                          const TimestepGrid& ts, const FreqMask& mask,
                          const PerturbationSchedule& pert, SeededRng& rng, PerturbationMode mode) {
  require_same_shape(original, cond, "guided_sample");
  Guidance g{mask, pert, mode};
  Tape tape;
  const Var out = guided_rollout(tape, original, sched, ts, g, rng,
                                 [&](Tape& tp, Var noisy, int t, std::size_t) {
                                   const ImageBuffer eps = denoiser(to_image(tp.value(noisy)), cond, t);
                                   return tp.constant(to_tensor(eps));
                                 });
  return to_image(tape.value(out));
}

namespace ops {

Var ddim_step(Tape& tape, Var noisy, Var eps, int t, int t_next, const NoiseSchedule& sched) {
  const auto [a, b] = ddim_coefficients(t, t_next, sched);
  return tape.push(
      {noisy, eps},
      [t, t_next, sched](const std::vector<const Tensor*>& in) {
        const Tensor& xs = *in[0];
        return Tensor(xs.shape, wmlab::ddim_step(to_image(xs), to_image(*in[1]), t, t_next, sched).data());
      },
      [a, b](Tape& tp, std::size_t node) {
        const Tensor& g = tp.grad(node);
        const auto& ins = tp.inputs(node);
        const double coef[2] = {a, b};
        for (int k = 0; k < 2; ++k) {
          if (!tp.requires_grad(ins[k])) continue;
          Tensor& gi = tp.grad(ins[k]);
          for (std::size_t i = 0; i < g.numel(); ++i) gi.data[i] += coef[k] * g.data[i];
        }
      });
}

Var ddim_step_clipped(Tape& tape, Var noisy, Var eps, int t, int t_next, const NoiseSchedule& sched) {
  const double s0 = std::sqrt(sched.alpha_bar(t)), s1 = std::sqrt(1.0 - sched.alpha_bar(t));
  const double an = std::sqrt(sched.alpha_bar(t_next)), bn = std::sqrt(1.0 - sched.alpha_bar(t_next));
  return tape.push(
      {noisy, eps},
      [t, t_next, sched](const std::vector<const Tensor*>& in) {
        const Tensor& xs = *in[0];
        return Tensor(xs.shape, wmlab::ddim_step_clipped(to_image(xs), to_image(*in[1]), t, t_next, sched).data());
      },
      [s0, s1, an, bn](Tape& tp, std::size_t node) {
        const Tensor& g = tp.grad(node);
        const auto& ins = tp.inputs(node);
        const Tensor& x = tp.value(ins[0]);
        const Tensor& e = tp.value(ins[1]);
        const bool gx = tp.requires_grad(ins[0]), ge = tp.requires_grad(ins[1]);
        for (std::size_t i = 0; i < g.numel(); ++i) {
          const double x0 = (x.data[i] - s1 * e.data[i]) / s0;
          const double pass = x0 > 0.0 && x0 < 1.0 ? an / s0 : 0.0;
          if (gx) tp.grad(ins[0]).data[i] += pass * g.data[i];
          if (ge) tp.grad(ins[1]).data[i] += (bn - pass * s1) * g.data[i];
        }
      });
}

Var fwm_fuse(Tape& tape, const ImageBuffer& forward_img, Var reverse, const FreqMask& mask) {
  return tape.push(
      {reverse},
      [forward_img, mask](const std::vector<const Tensor*>& in) {
        const Tensor& r = *in[0];
        return Tensor(r.shape, wmlab::fwm_fuse(forward_img, to_image(r), mask).data());
      },
      [forward_img, mask](Tape& tp, std::size_t node) {
        const std::size_t in = tp.inputs(node)[0];
        if (!tp.requires_grad(in)) return;
        const Tensor& g = tp.grad(node);
        const ImageBuffer d =
            fwm_fuse_backward(forward_img, to_image(tp.value(in)), mask, to_image(g));
        Tensor& gi = tp.grad(in);
        for (std::size_t i = 0; i < gi.numel(); ++i) gi.data[i] += d.data()[i];
      });
}

}  // namespace ops

}  // namespace wmlab
