#include "wmlab/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace wmlab {

void TrainConfig::validate() const {
  if (transition_iter < 0 || transition_iter > total_iters)
    throw Error("train: K must lie in [0, total_iters]");
  if (batch_size < 1 || patches_per_image < 1) throw Error("train: batch and patch counts must be positive");
  if (patch_size < 8) throw Error("train: patch size must be at least 8");
  if (s_train < 2) throw Error("train: s_train must be at least 2");
  if (window < 1) throw Error("train: truncation window must be at least 1");
  if (!(lr > 0.0)) throw Error("train: learning rate must be positive");
  if (!(stage2_lr >= 0.0)) throw Error("train: stage2_lr must be non-negative");
  if (l_min < 0.0 || l_max < l_min) throw Error("train: need 0 <= l_min <= l_max");
  if (mask_beta < 0.0 || mask_beta > 1.0) throw Error("train: mask beta must be in [0, 1]");
}

MsSsimOptions TrainConfig::msssim() const {
  MsSsimOptions o;
  o.scales = msssim_scales > 0 ? msssim_scales : fitting_scales(patch_size, o.window);
  if (o.scales < 1) throw Error("train: patch too small for the MS-SSIM window");
  return o;
}

std::string LossReport::log_line() const {
  char buf[160];
  if (l1 && msssim)
    std::snprintf(buf, sizeof buf, "%d,%d,%.10g,%.10g,%.10g", iteration, stage, loss, *l1, *msssim);
  else
    std::snprintf(buf, sizeof buf, "%d,%d,%.10g,,", iteration, stage, loss);
  return buf;
}

TrainState make_train_state(DenoiserParams params, const TrainConfig& cfg) {
  TrainState st{std::move(params), {}, {}};
  st.adam = make_adam(st.params, cfg.lr);
  st.ema = make_ema(st.params, cfg.ema_decay);
  return st;
}

Var noise_loss(Tape& tape, const TrainState& st, const ParamVars& p, const PatchBatch& batch,
               const std::vector<int>& t, const std::vector<ImageBuffer>& eps, const NoiseSchedule& sched) {
  std::vector<ImageBuffer> noisy;
  for (std::size_t i = 0; i < batch.original.size(); ++i)
    noisy.push_back(q_sample(batch.original[i], t[i], eps[i], sched));
  const Var x = tape.constant(stack_images(noisy));
  const Var c = tape.constant(stack_images(batch.watermarked));
  const Var out = forward(tape, st.params.arch, p, x, c, t);
  return ops::mse_loss(tape, out, tape.constant(stack_images(eps)));
}

namespace {

void check_batch(const PatchBatch& b) {
  if (b.original.empty() || b.original.size() != b.watermarked.size())
    throw Error("training: batch needs equally many original and watermarked patches");
  for (std::size_t i = 0; i < b.original.size(); ++i) {
    require_same_shape(b.original[i], b.watermarked[i], "training batch");
    require_same_shape(b.original[i], b.original[0], "training batch");
  }
}

void apply_update(TrainState& st, const ParamGrads& g) {
  adam_step(st.params, g, st.adam);
  ema_update(st.ema, st.params);
}

}  // namespace

LossReport stage1_step(const PatchBatch& batch, TrainState& st, const NoiseSchedule& sched,
                       SeededRng& rng) {
  check_batch(batch);
  std::vector<int> t;
  std::vector<ImageBuffer> eps;
  for (const auto& img : batch.original) {
    t.push_back(static_cast<int>(rng.uniform_int(1, sched.t_max())));
    eps.push_back(normal_image(img.height(), img.width(), img.channels(), rng));
  }
  Tape tape;
  const ParamVars p = bind_params(tape, st.params);
  const Var loss = noise_loss(tape, st, p, batch, t, eps, sched);
  tape.backward_scalar(loss);
  apply_update(st, collect_grads(tape, p));
  LossReport r;
  r.stage = 1;
  r.loss = tape.value(loss).data[0];
  return r;
}

RefinementTerms refinement_loss(Tape& tape, Var a, Var b, const MsSsimOptions& opt) {
  const Var l1 = ops::l1_loss(tape, a, b);
  const Var ms = ops::ms_ssim_loss(tape, a, b, opt);
  return {ops::add(tape, l1, ms), l1, ms};
}

RefinementTerms stage2_rollout(Tape& tape, const ParamVars& p, const DenoiserParams& params,
                               const ImageBuffer& original, const ImageBuffer& watermarked,
                               const NoiseSchedule& sched, const TrainConfig& cfg, SeededRng& rng,
                               std::vector<std::size_t>* recorded) {
  require_same_shape(original, watermarked, "stage2_rollout");
  const TimestepGrid ts = timestep_grid(cfg.s_train, sched.t_max(), cfg.spacing);
  Guidance g;
  g.mask = make_freq_mask(original.height(), original.width(), cfg.mask_beta);
  g.perturbation = {cfg.l_min, cfg.l_max, sched.t_max()};
  g.clip_x0 = cfg.clip_x0;
  const Var cond = tape.constant(to_tensor(watermarked));
  const std::size_t first_recorded =
      ts.transitions() > static_cast<std::size_t>(cfg.window) ? ts.transitions() - cfg.window : 0;
  const Var out = guided_rollout(
      tape, original, sched, ts, g, rng, [&](Tape& tp, Var noisy, int t, std::size_t j) {
        if (j >= first_recorded) {
          if (recorded) recorded->push_back(j);
          return forward(tp, params.arch, p, noisy, cond, {t});
        }
        return tp.constant(to_tensor(forward(params, to_image(tp.value(noisy)), watermarked, t)));
      });
  return refinement_loss(tape, out, tape.constant(to_tensor(original)), cfg.msssim());
}

LossReport stage2_step(const PatchBatch& batch, TrainState& st, const NoiseSchedule& sched,
                       const TrainConfig& cfg, SeededRng& rng) {
  check_batch(batch);
  const double inv = 1.0 / static_cast<double>(batch.original.size());
  ParamGrads total;
  LossReport r;
  r.stage = 2;
  r.l1 = 0.0;
  r.msssim = 0.0;
  for (std::size_t i = 0; i < batch.original.size(); ++i) {
    Tape tape;
    const ParamVars p = bind_params(tape, st.params);
    const RefinementTerms terms =
        stage2_rollout(tape, p, st.params, batch.original[i], batch.watermarked[i], sched, cfg, rng);
    tape.backward_scalar(terms.total);
    ParamGrads g = collect_grads(tape, p);
    if (total.tensors.empty()) {
      total = std::move(g);
      for (auto& t : total.tensors)
        for (double& v : t.data) v *= inv;
    } else {
      for (std::size_t k = 0; k < g.tensors.size(); ++k)
        for (std::size_t e = 0; e < g.tensors[k].numel(); ++e) total.tensors[k].data[e] += inv * g.tensors[k].data[e];
    }
    *r.l1 += inv * tape.value(terms.l1).data[0];
    *r.msssim += inv * tape.value(terms.msssim).data[0];
  }
  r.loss = *r.l1 + *r.msssim;
  apply_update(st, total);
  return r;
}

TrainResult train(const std::vector<std::pair<ImageBuffer, ImageBuffer>>& corpus, const TrainConfig& cfg,
                  DenoiserParams params, const NoiseSchedule& sched,
                  const std::function<void(const LossReport&)>& on_step) {
  cfg.validate();
  if (corpus.empty()) throw Error("train: empty corpus");
  for (const auto& [a, b] : corpus) {
    require_same_shape(a, b, "train corpus pair");
    if (std::min(a.height(), a.width()) < cfg.patch_size)
      throw Error("train: corpus image smaller than the patch size");
  }
  if (cfg.transition_iter < cfg.total_iters) cfg.msssim();

  std::ofstream log;
  if (!cfg.log_path.empty()) {
    log.open(cfg.log_path, std::ios::trunc);
    if (!log) throw Error("train: cannot write loss log " + cfg.log_path.string());
    log << "iter,stage,loss,l1,msssim\n";
  }
  auto checkpoint = [&](const TrainState& st) {
    if (cfg.checkpoint_path.empty()) return;
    save_checkpoint({st.params, st.ema, st.adam}, cfg.checkpoint_path);
  };

  TrainResult res{make_train_state(std::move(params), cfg), {}};
  SeededRng rng(cfg.seed);
  for (int iter = 1; iter <= cfg.total_iters; ++iter) {
    PatchBatch batch;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto& [orig, wm] = corpus[rng.below(corpus.size())];
      for (const auto& r : random_patch_rects(rng, cfg.patches_per_image, cfg.patch_size, orig.height(), orig.width())) {
        batch.original.push_back(crop(orig, r));
        batch.watermarked.push_back(crop(wm, r));
      }
    }
    if (iter == cfg.transition_iter + 1 && cfg.stage2_lr > 0.0) res.state.adam.lr = cfg.stage2_lr;
    LossReport rep = stage_for(iter, cfg.transition_iter) == 1
                         ? stage1_step(batch, res.state, sched, rng)
                         : stage2_step(batch, res.state, sched, cfg, rng);
    rep.iteration = iter;
    if (!std::isfinite(rep.loss)) throw Error("train: loss diverged at iteration " + std::to_string(iter));
    if (log) log << rep.log_line() << '\n';
    if (on_step) on_step(rep);
    res.log.push_back(rep);
    if (cfg.checkpoint_every > 0 && iter % cfg.checkpoint_every == 0) checkpoint(res.state);
  }
  checkpoint(res.state);
  return res;
}

std::vector<double> moving_average(const std::vector<double>& xs, std::size_t n) {
  std::vector<double> out;
  if (n == 0 || xs.size() < n) return out;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += xs[i];
  out.push_back(s / n);
  for (std::size_t i = n; i < xs.size(); ++i) {
    s += xs[i] - xs[i - n];
    out.push_back(s / n);
  }
  return out;
}

}  // namespace wmlab
