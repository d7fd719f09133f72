#pragma once

#include <complex>
#include <span>
#include <vector>

#include "wmlab/image.hpp"
#include "wmlab/rng.hpp"

namespace wmlab {

/// Unitary 2-D spectrum of one channel, unshifted layout (DC at (0, 0)).
struct SpectralPlane {
  int height = 0;
  int width = 0;
  std::vector<double> real;
  std::vector<double> imag;

  std::size_t size() const { return real.size(); }
};

/// Amplitude/phase view of a SpectralPlane. Phase lies in (-pi, pi].
struct SpectralDecomp {
  int height = 0;
  int width = 0;
  std::vector<double> amplitude;
  std::vector<double> phase;
};

/// Binary low-frequency mask, stored in the unshifted spectrum layout.
struct FreqMask {
  double beta = 1.0;
  int height = 0;
  int width = 0;
  std::vector<double> values;

  std::size_t count() const;
};

/// Linear perturbation amplitude L(t) = l_min + (l_max - l_min) * t / t_max.
struct PerturbationSchedule {
  double l_min = 0.0;
  double l_max = 0.0;
  int t_max = 1000;
};

enum class PerturbationMode {
  gaussian,  ///< img + L * z, z ~ N(0, 1) per pixel
  constant,  ///< img + L, the literal scalar offset
};

/// In-place 1-D DFT (no normalization). Radix-2 for power-of-two lengths,
/// direct summation otherwise. `inverse` flips the exponent sign.
void dft1(std::span<std::complex<double>> data, bool inverse);

/// 2-D transform with the 1/sqrt(HW) normalization; complex in, complex out.
std::vector<std::complex<double>> dft2_complex(std::span<const std::complex<double>> grid,
                                               int height, int width, bool inverse);

SpectralPlane dft2(std::span<const double> channel, int height, int width);

/// Real part of the inverse transform. Throws if the imaginary residue exceeds
/// 1e-9 (relative to the output magnitude), which indicates a spectrum that is
/// not conjugate-symmetric.
std::vector<double> idft2(const SpectralPlane& plane);

SpectralDecomp decompose(const SpectralPlane& plane);
SpectralPlane recompose(const SpectralDecomp& d);

FreqMask make_freq_mask(int height, int width, double beta);
FreqMask zero_mask(int height, int width);

/// Amplitude soft fusion with phase replacement, per channel:
///   A_out = mask * A(reverse) + (1 - mask) * A(forward),  P_out = P(forward).
ImageBuffer fwm_fuse(const ImageBuffer& forward_img, const ImageBuffer& reverse_img,
                     const FreqMask& mask);

/// Gradient of <grad_out, fwm_fuse(forward, reverse, mask)> with respect to
/// `reverse_img`; `forward_img` is treated as a constant.
ImageBuffer fwm_fuse_backward(const ImageBuffer& forward_img, const ImageBuffer& reverse_img,
                              const FreqMask& mask, const ImageBuffer& grad_out);

double perturbation_amplitude(const PerturbationSchedule& s, int t);

ImageBuffer apply_perturbation(const ImageBuffer& img, double amplitude, SeededRng& rng,
                               PerturbationMode mode = PerturbationMode::gaussian);

}  // namespace wmlab
