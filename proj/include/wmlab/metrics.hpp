#pragma once

#include "wmlab/codecs.hpp"
#include "wmlab/image.hpp"

namespace wmlab {

/// Returned by psnr for identical images.
inline constexpr double kPsnrCap = 99.0;

struct MetricResult {
  double psnr = 0.0;
  double ber = 0.0;
  double ssim = 0.0;
};

/// 10 log10(1 / MSE) on unit-range data, MSE over all channels.
double psnr(const ImageBuffer& a, const ImageBuffer& b);

/// PSNR recomputed on the 8-bit exports of both images.
double psnr_on_bytes(const ImageBuffer& a, const ImageBuffer& b);

/// Hamming distance divided by the bit count.
double ber(const WatermarkBits& a, const WatermarkBits& b);

/// Single-scale structural similarity: mean over valid window positions and
/// channels of luminance * contrast-structure, 11x11 Gaussian window (sigma 1.5).
double ssim(const ImageBuffer& a, const ImageBuffer& b, double c1 = 1e-4, double c2 = 9e-4);

}  // namespace wmlab
