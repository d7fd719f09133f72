#include "wmlab/spectral.hpp"

#include <algorithm>
#include <cmath>

#include <unsupported/Eigen/FFT>

namespace wmlab {

namespace {

using cd = std::complex<double>;

void check_plane(const SpectralPlane& p) {
  if (p.height <= 0 || p.width <= 0 ||
      p.real.size() != static_cast<std::size_t>(p.height) * p.width || p.imag.size() != p.real.size())
    throw Error("spectral plane has inconsistent shape");
}

constexpr double kPhaseFloor = 1e-12;

}  // namespace

std::size_t FreqMask::count() const {
  return static_cast<std::size_t>(std::count_if(values.begin(), values.end(),
                                                [](double v) { return v != 0.0; }));
}

void dft1(std::span<std::complex<double>> data, bool inverse) {
  if (data.size() <= 1) return;
  thread_local Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::Unscaled);
  thread_local std::vector<cd> out;
  out.resize(data.size());
  if (inverse)
    fft.inv(out.data(), data.data(), static_cast<Eigen::Index>(data.size()));
  else
    fft.fwd(out.data(), data.data(), static_cast<Eigen::Index>(data.size()));
  std::copy(out.begin(), out.end(), data.begin());
}

std::vector<std::complex<double>> dft2_complex(std::span<const std::complex<double>> grid,
                                               int height, int width, bool inverse) {
  if (height <= 0 || width <= 0 || grid.size() != static_cast<std::size_t>(height) * width)
    throw Error("dft2: grid shape mismatch");
  std::vector<cd> a(grid.begin(), grid.end());
  for (int y = 0; y < height; ++y) dft1({a.data() + static_cast<std::size_t>(y) * width,
                                         static_cast<std::size_t>(width)}, inverse);
  std::vector<cd> col(height);
  for (int x = 0; x < width; ++x) {
    for (int y = 0; y < height; ++y) col[y] = a[static_cast<std::size_t>(y) * width + x];
    dft1(col, inverse);
    for (int y = 0; y < height; ++y) a[static_cast<std::size_t>(y) * width + x] = col[y];
  }
  const double norm = 1.0 / std::sqrt(static_cast<double>(height) * width);
  for (auto& v : a) v *= norm;
  return a;
}

SpectralPlane dft2(std::span<const double> channel, int height, int width) {
  std::vector<cd> g(channel.begin(), channel.end());
  const auto f = dft2_complex(g, height, width, false);
  SpectralPlane p{height, width, std::vector<double>(f.size()), std::vector<double>(f.size())};
  for (std::size_t i = 0; i < f.size(); ++i) {
    p.real[i] = f[i].real();
    p.imag[i] = f[i].imag();
  }
  return p;
}

std::vector<double> idft2(const SpectralPlane& plane) {
  check_plane(plane);
  std::vector<cd> g(plane.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = {plane.real[i], plane.imag[i]};
  const auto x = dft2_complex(g, plane.height, plane.width, true);
  std::vector<double> out(x.size());
  double max_re = 0.0, max_im = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = x[i].real();
    max_re = std::max(max_re, std::abs(x[i].real()));
    max_im = std::max(max_im, std::abs(x[i].imag()));
  }
  if (max_im > 1e-9 * std::max(1.0, max_re))
    throw Error("idft2: imaginary residue too large; spectrum is not conjugate-symmetric");
  return out;
}

SpectralDecomp decompose(const SpectralPlane& plane) {
  check_plane(plane);
  SpectralDecomp d{plane.height, plane.width, std::vector<double>(plane.size()),
                   std::vector<double>(plane.size())};
  for (std::size_t i = 0; i < plane.size(); ++i) {
    const double a = std::hypot(plane.real[i], plane.imag[i]);
    d.amplitude[i] = a;
    d.phase[i] = a < kPhaseFloor ? 0.0 : std::atan2(plane.imag[i], plane.real[i]);
  }
  return d;
}

SpectralPlane recompose(const SpectralDecomp& d) {
  SpectralPlane p{d.height, d.width, std::vector<double>(d.amplitude.size()),
                  std::vector<double>(d.amplitude.size())};
  for (std::size_t i = 0; i < d.amplitude.size(); ++i) {
    p.real[i] = d.amplitude[i] * std::cos(d.phase[i]);
    p.imag[i] = d.amplitude[i] * std::sin(d.phase[i]);
  }
  return p;
}

FreqMask make_freq_mask(int height, int width, double beta) {
  if (!(beta > 0.0 && beta <= 1.0)) throw Error("make_freq_mask: beta must be in (0, 1]");
  if (height <= 0 || width <= 0) throw Error("make_freq_mask: empty shape");
  FreqMask m{beta, height, width, std::vector<double>(static_cast<std::size_t>(height) * width, 0.0)};
  const int half_h = static_cast<int>(std::floor(beta * height / 2.0));
  const int half_w = static_cast<int>(std::floor(beta * width / 2.0));
  const int cy = height / 2, cx = width / 2;
  // Rectangle is laid out around the shifted centre, then mapped back to the
  // unshifted index (shifted i holds frequency i - c).
  for (int sy = std::max(0, cy - half_h); sy <= std::min(height - 1, cy + half_h); ++sy)
    for (int sx = std::max(0, cx - half_w); sx <= std::min(width - 1, cx + half_w); ++sx) {
      const int uy = ((sy - cy) % height + height) % height;
      const int ux = ((sx - cx) % width + width) % width;
      m.values[static_cast<std::size_t>(uy) * width + ux] = 1.0;
    }
  return m;
}

FreqMask zero_mask(int height, int width) {
  return {0.0, height, width, std::vector<double>(static_cast<std::size_t>(height) * width, 0.0)};
}

ImageBuffer fwm_fuse(const ImageBuffer& forward_img, const ImageBuffer& reverse_img,
                     const FreqMask& mask) {
  require_same_shape(forward_img, reverse_img, "fwm_fuse");
  const int h = forward_img.height(), w = forward_img.width();
  if (mask.height != h || mask.width != w) throw Error("fwm_fuse: mask shape mismatch");
  ImageBuffer out(h, w, forward_img.channels());
  for (int c = 0; c < forward_img.channels(); ++c) {
    const SpectralDecomp fwd = decompose(dft2(forward_img.plane(c), h, w));
    const SpectralDecomp rev = decompose(dft2(reverse_img.plane(c), h, w));
    SpectralDecomp fused{h, w, fwd.amplitude, fwd.phase};
    for (std::size_t i = 0; i < fused.amplitude.size(); ++i) {
      const double m = mask.values[i];
      fused.amplitude[i] = m * rev.amplitude[i] + (1.0 - m) * fwd.amplitude[i];
    }
    const auto spatial = idft2(recompose(fused));
    std::copy(spatial.begin(), spatial.end(), out.plane(c).begin());
  }
  return out;
}

ImageBuffer fwm_fuse_backward(const ImageBuffer& forward_img, const ImageBuffer& reverse_img,
                              const FreqMask& mask, const ImageBuffer& grad_out) {
  require_same_shape(forward_img, reverse_img, "fwm_fuse_backward");
  require_same_shape(forward_img, grad_out, "fwm_fuse_backward");
  const int h = forward_img.height(), w = forward_img.width();
  if (mask.height != h || mask.width != w) throw Error("fwm_fuse_backward: mask shape mismatch");
  ImageBuffer grad_in(h, w, forward_img.channels());
  const std::size_t n = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < forward_img.channels(); ++c) {
    const SpectralDecomp fwd = decompose(dft2(forward_img.plane(c), h, w));
    const SpectralPlane rev = dft2(reverse_img.plane(c), h, w);
    // out = Re(F^-1(Y)), so dL/dRe(Y) + i dL/dIm(Y) = F(g).
    const SpectralPlane g = dft2(grad_out.plane(c), h, w);
    std::vector<cd> dx(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double m = mask.values[i];
      const double a = std::hypot(rev.real[i], rev.imag[i]);
      if (m == 0.0 || a < kPhaseFloor) continue;
      const double d_amp =
          m * (g.real[i] * std::cos(fwd.phase[i]) + g.imag[i] * std::sin(fwd.phase[i]));
      // dL/dRe(X) - i dL/dIm(X), pulled back through the forward transform.
      dx[i] = {d_amp * rev.real[i] / a, -d_amp * rev.imag[i] / a};
    }
    const auto back = dft2_complex(dx, h, w, false);
    auto plane = grad_in.plane(c);
    for (std::size_t i = 0; i < n; ++i) plane[i] = back[i].real();
  }
  return grad_in;
}

double perturbation_amplitude(const PerturbationSchedule& s, int t) {
  if (s.t_max <= 0) throw Error("perturbation schedule: t_max must be positive");
  if (s.l_min < 0.0 || s.l_min > s.l_max)
    throw Error("perturbation schedule: require 0 <= l_min <= l_max");
  if (t < 0 || t > s.t_max) throw Error("perturbation_amplitude: t out of range");
  return s.l_min + (s.l_max - s.l_min) * static_cast<double>(t) / s.t_max;
}

ImageBuffer apply_perturbation(const ImageBuffer& img, double amplitude, SeededRng& rng,
                               PerturbationMode mode) {
  if (amplitude < 0.0) throw Error("apply_perturbation: amplitude must be nonnegative");
  ImageBuffer out = img;
  if (mode == PerturbationMode::constant) {
    for (double& v : out.data()) v += amplitude;
    return out;
  }
  for (double& v : out.data()) v += amplitude * rng.normal();
  return out;
}

}  // namespace wmlab
