#include "wmlab/losses.hpp"

#include <cmath>

namespace wmlab {

int fitting_scales(int side, int window, int max_scales) {
  int m = 0;
  while (m < max_scales && (1 << m) * window <= side) ++m;
  return m;
}

namespace ops {

Var l1_loss(Tape& tape, Var a, Var b) { return mean(tape, abs(tape, sub(tape, a, b))); }

Var mse_loss(Tape& tape, Var a, Var b) { return mean(tape, square(tape, sub(tape, a, b))); }

Var ssim_term(Tape& tape, Var a, Var b, const MsSsimOptions& opt) {
  const auto taps = gaussian_taps(opt.window, opt.sigma);
  const Var mu_a = separable_filter_valid(tape, a, taps);
  const Var mu_b = separable_filter_valid(tape, b, taps);
  const Var mu_aa = mul(tape, mu_a, mu_a);
  const Var mu_bb = mul(tape, mu_b, mu_b);
  const Var mu_ab = mul(tape, mu_a, mu_b);
  const Var var_a = sub(tape, separable_filter_valid(tape, mul(tape, a, a), taps), mu_aa);
  const Var var_b = sub(tape, separable_filter_valid(tape, mul(tape, b, b), taps), mu_bb);
  const Var cov = sub(tape, separable_filter_valid(tape, mul(tape, a, b), taps), mu_ab);
  const Var lum = div(tape, add_scalar(tape, scale(tape, mu_ab, 2.0), opt.c1),
                      add_scalar(tape, add(tape, mu_aa, mu_bb), opt.c1));
  const Var cs = div(tape, add_scalar(tape, scale(tape, cov, 2.0), opt.c2),
                     add_scalar(tape, add(tape, var_a, var_b), opt.c2));
  return mean(tape, mul(tape, lum, cs));
}

Var ms_ssim_loss(Tape& tape, Var a, Var b, const MsSsimOptions& opt) {
  if (opt.scales < 1) throw Error("ms_ssim_loss: scales must be >= 1");
  const Tensor& av = tape.value(a);
  if (av.rank() != 4 || !av.same_shape(tape.value(b)))
    throw Error("ms_ssim_loss: inputs must share an [N, C, H, W] shape");
  if (std::min(av.dim(2), av.dim(3)) < opt.min_side())
    throw Error("ms_ssim_loss: image too small for " + std::to_string(opt.scales) +
                " scales with window " + std::to_string(opt.window));
  Var prod = ssim_term(tape, a, b, opt);
  for (int j = 1; j < opt.scales; ++j) {
    a = avg_pool2(tape, a);
    b = avg_pool2(tape, b);
    prod = mul(tape, prod, ssim_term(tape, a, b, opt));
  }
  return add_scalar(tape, scale(tape, prod, -1.0), 1.0);
}

}  // namespace ops

double l1_loss(const ImageBuffer& a, const ImageBuffer& b) {
  require_same_shape(a, b, "l1_loss");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a.data()[i] - b.data()[i]);
  return s / static_cast<double>(a.size());
}

double mse_loss(const ImageBuffer& a, const ImageBuffer& b) {
  require_same_shape(a, b, "mse_loss");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

double ms_ssim_loss(const ImageBuffer& a, const ImageBuffer& b, const MsSsimOptions& opt) {
  require_same_shape(a, b, "ms_ssim_loss");
  Tape tape;
  const Var va = tape.constant(to_tensor(a));
  const Var vb = tape.constant(to_tensor(b));
  return tape.value(ops::ms_ssim_loss(tape, va, vb, opt)).data[0];
}

}  // namespace wmlab
