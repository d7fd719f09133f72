#include <cmath>
#include <functional>

#include "wmlab/harness.hpp"
#include "wmlab/losses.hpp"
#include "wmlab/sampler.hpp"

namespace wmlab {

namespace {

struct Case {
  std::string name;
  std::vector<Tensor> inputs;
  std::function<Var(Tape&, const std::vector<Var>&)> build;
};

Tensor random_tensor(std::vector<int> shape, SeededRng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = lo + (hi - lo) * rng.uniform();
  return t;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a.data[i] * b.data[i];
  return s;
}

GradcheckResult check(const Case& c, SeededRng& rng, double h, double tol, int max_points) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& t : c.inputs) vars.push_back(tape.leaf(t));
  const Var out = c.build(tape, vars);
  const Tensor w = random_tensor(tape.value(out).shape, rng);
  tape.backward(out, w);

  GradcheckResult r{c.name, 0.0, 0, true};
  for (std::size_t k = 0; k < vars.size(); ++k) {
    const Tensor analytic = tape.has_grad(vars[k]) ? tape.grad(vars[k]) : Tensor(c.inputs[k].shape);
    const std::size_t n = c.inputs[k].numel();
    const std::size_t points = std::min<std::size_t>(n, max_points);
    for (std::size_t q = 0; q < points; ++q) {
      const std::size_t i = points == n ? q : rng.below(n);
      double& x = tape.leaf_value(vars[k]).data[i];
      const double x0 = x;
      x = x0 + h;
      tape.replay();
      const double fp = dot(w, tape.value(out));
      tape.leaf_value(vars[k]).data[i] = x0 - h;
      tape.replay();
      const double fm = dot(w, tape.value(out));
      tape.leaf_value(vars[k]).data[i] = x0;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic.data[i];
      const double rel = std::abs(a - numeric) / (std::abs(a) + 1e-8);
      r.max_rel_error = std::max(r.max_rel_error, rel);
      ++r.checked;
    }
  }
  tape.replay();
  r.passed = r.max_rel_error < tol;
  return r;
}

}  // namespace

std::vector<GradcheckResult> run_gradcheck(std::uint64_t seed, double h, double tol) {
  SeededRng rng(seed);
  const std::vector<int> img = {2, 4, 8, 8};
  auto T = [&](std::vector<int> s, double lo = -1.0, double hi = 1.0) { return random_tensor(std::move(s), rng, lo, hi); };
  using V = const std::vector<Var>&;

  std::vector<Case> cases;
  cases.push_back({"add", {T(img), T(img)}, [](Tape& t, V v) { return ops::add(t, v[0], v[1]); }});
  cases.push_back({"sub", {T(img), T(img)}, [](Tape& t, V v) { return ops::sub(t, v[0], v[1]); }});
  cases.push_back({"mul", {T(img), T(img)}, [](Tape& t, V v) { return ops::mul(t, v[0], v[1]); }});
  cases.push_back({"div", {T(img), T(img, 0.5, 1.5)}, [](Tape& t, V v) { return ops::div(t, v[0], v[1]); }});
  cases.push_back({"scale", {T(img)}, [](Tape& t, V v) { return ops::scale(t, v[0], -1.7); }});
  cases.push_back({"add_scalar", {T(img)}, [](Tape& t, V v) { return ops::add_scalar(t, v[0], 0.3); }});
  cases.push_back({"lincomb", {T(img), T(img)}, [](Tape& t, V v) { return ops::lincomb(t, v[0], 0.7, v[1], -2.0); }});
  cases.push_back({"abs", {T(img)}, [](Tape& t, V v) { return ops::abs(t, v[0]); }});
  cases.push_back({"square", {T(img)}, [](Tape& t, V v) { return ops::square(t, v[0]); }});
  cases.push_back({"silu", {T(img, -3.0, 3.0)}, [](Tape& t, V v) { return ops::silu(t, v[0]); }});
  cases.push_back({"mean", {T(img)}, [](Tape& t, V v) { return ops::mean(t, v[0]); }});
  cases.push_back({"conv2d", {T(img), T({6, 4, 3, 3}), T({6})},
                   [](Tape& t, V v) { return ops::conv2d(t, v[0], v[1], v[2], 1, 1); }});
  cases.push_back({"conv2d_stride2", {T(img), T({3, 4, 3, 3}), T({3})},
                   [](Tape& t, V v) { return ops::conv2d(t, v[0], v[1], v[2], 2, 1); }});
  cases.push_back({"group_norm", {T(img), T({4}, 0.5, 1.5), T({4})},
                   [](Tape& t, V v) { return ops::group_norm(t, v[0], v[1], v[2], 2); }});
  cases.push_back({"add_channel_bias", {T(img), T({2, 4})},
                   [](Tape& t, V v) { return ops::add_channel_bias(t, v[0], v[1]); }});
  cases.push_back({"linear", {T({2, 5}), T({3, 5}), T({3})},
                   [](Tape& t, V v) { return ops::linear(t, v[0], v[1], v[2]); }});
  cases.push_back({"concat_channels", {T(img), T({2, 3, 8, 8})},
                   [](Tape& t, V v) { return ops::concat_channels(t, v[0], v[1]); }});
  cases.push_back({"upsample_nearest2", {T({2, 3, 4, 4})},
                   [](Tape& t, V v) { return ops::upsample_nearest2(t, v[0]); }});
  cases.push_back({"avg_pool2", {T(img)}, [](Tape& t, V v) { return ops::avg_pool2(t, v[0]); }});
  cases.push_back({"separable_filter_valid", {T(img)},
                   [](Tape& t, V v) { return ops::separable_filter_valid(t, v[0], gaussian_taps(3, 1.5)); }});

  MsSsimOptions small;
  small.window = 3;
  small.scales = 2;
  const std::vector<int> pair = {1, 1, 8, 8};
  cases.push_back({"l1_loss", {T(pair, 0, 1), T(pair, 0, 1)}, [](Tape& t, V v) { return ops::l1_loss(t, v[0], v[1]); }});
  cases.push_back({"mse_loss", {T(pair, 0, 1), T(pair, 0, 1)}, [](Tape& t, V v) { return ops::mse_loss(t, v[0], v[1]); }});
  cases.push_back({"ms_ssim_loss", {T(pair, 0, 1), T(pair, 0, 1)},
                   [small](Tape& t, V v) { return ops::ms_ssim_loss(t, v[0], v[1], small); }});
  cases.push_back({"l1_plus_ms_ssim", {T({1, 3, 8, 8}, 0, 1), T({1, 3, 8, 8}, 0, 1)},
                   [small](Tape& t, V v) {
                     return ops::add(t, ops::l1_loss(t, v[0], v[1]), ops::ms_ssim_loss(t, v[0], v[1], small));
                   }});

  const NoiseSchedule sched = linear_schedule(1000);
  cases.push_back({"ddim_step", {T(pair), T(pair)},
                   [sched](Tape& t, V v) { return ops::ddim_step(t, v[0], v[1], 600, 300, sched); }});
  cases.push_back({"ddim_step_clipped", {T(pair, -0.5, 1.5), T(pair)},
                   [sched](Tape& t, V v) { return ops::ddim_step_clipped(t, v[0], v[1], 600, 300, sched); }});
  const ImageBuffer fwd = to_image(T({1, 3, 8, 8}, 0, 1));
  const FreqMask mask = make_freq_mask(8, 8, 0.6);
  cases.push_back({"fwm_fuse", {T({1, 3, 8, 8}, 0, 1)},
                   [fwd, mask](Tape& t, V v) { return ops::fwm_fuse(t, fwd, v[0], mask); }});

  std::vector<GradcheckResult> results;
  for (const auto& c : cases) results.push_back(check(c, rng, h, tol, 40));

  // Denoiser: 20 randomly chosen scalar parameters against a projected output.
  ArchDescriptor arch;
  arch.channels = 1;
  arch.base_width = 8;
  arch.temb_dim = 16;
  const DenoiserParams params = init_params(arch, rng);
  const Tensor x = T({2, 1, 8, 8}), cnd = T({2, 1, 8, 8}, 0, 1);
  Tape tape;
  const ParamVars pv = bind_params(tape, params);
  const Var out = forward(tape, arch, pv, tape.constant(x), tape.constant(cnd), {37, 811});
  const Tensor w = random_tensor(tape.value(out).shape, rng);
  const ParamGrads g = backward(tape, pv, out, w);
  GradcheckResult dr{"denoiser_params", 0.0, 0, true};
  for (int q = 0; q < 20; ++q) {
    const std::size_t k = rng.below(params.size());
    const std::size_t i = rng.below(params.tensors[k].numel());
    double& p = tape.leaf_value(pv.vars[k]).data[i];
    const double p0 = p;
    p = p0 + h;
    tape.replay();
    const double fp = dot(w, tape.value(out));
    tape.leaf_value(pv.vars[k]).data[i] = p0 - h;
    tape.replay();
    const double fm = dot(w, tape.value(out));
    tape.leaf_value(pv.vars[k]).data[i] = p0;
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = g.tensors[k].data[i];
    dr.max_rel_error = std::max(dr.max_rel_error, std::abs(a - numeric) / (std::abs(a) + 1e-8));
    ++dr.checked;
  }
  dr.passed = dr.max_rel_error < tol;
  results.push_back(dr);
  return results;
}

}  // namespace wmlab
