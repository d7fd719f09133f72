#pragma once

#include "wmlab/autodiff.hpp"
#include "wmlab/image.hpp"

namespace wmlab {

struct MsSsimOptions {
  int scales = 5;
  double c1 = 1e-4;
  double c2 = 9e-4;
  int window = 11;
  double sigma = 1.5;

  /// Smallest image side the options can evaluate: 2^(scales-1) * window.
  int min_side() const { return (1 << (scales - 1)) * window; }
};

/// Largest scale count (<= max_scales) whose pyramid fits a side of `side` pixels.
int fitting_scales(int side, int window = 11, int max_scales = 5);

double l1_loss(const ImageBuffer& a, const ImageBuffer& b);
double mse_loss(const ImageBuffer& a, const ImageBuffer& b);

/// 1 - prod_j mean(l_j * cs_j); both factors enter at every scale.
double ms_ssim_loss(const ImageBuffer& a, const ImageBuffer& b, const MsSsimOptions& opt = {});

namespace ops {

Var l1_loss(Tape& tape, Var a, Var b);
Var mse_loss(Tape& tape, Var a, Var b);
/// Mean over positions and channels of l * cs for one scale, as a [1] tensor.
Var ssim_term(Tape& tape, Var a, Var b, const MsSsimOptions& opt);
Var ms_ssim_loss(Tape& tape, Var a, Var b, const MsSsimOptions& opt);

}  // namespace ops

}  // namespace wmlab
