#include "wmlab/metrics.hpp"

#include <cmath>
#include <vector>

namespace wmlab {

double psnr(const ImageBuffer& a, const ImageBuffer& b) {
  require_same_shape(a, b, "psnr");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double psnr_on_bytes(const ImageBuffer& a, const ImageBuffer& b) {
  return psnr(quantize8(a), quantize8(b));
}

double ber(const WatermarkBits& a, const WatermarkBits& b) {
  if (a.bits.size() != b.bits.size()) throw Error("ber: watermark lengths differ");
  if (a.bits.empty()) throw Error("ber: empty watermark");
  std::size_t diff = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) diff += a.bits[i] != b.bits[i];
  return static_cast<double>(diff) / static_cast<double>(a.bits.size());
}

double ssim(const ImageBuffer& a, const ImageBuffer& b, double c1, double c2) {
  require_same_shape(a, b, "ssim");
  constexpr int kWin = 11;
  constexpr double kSigma = 1.5;
  if (a.height() < kWin || a.width() < kWin) throw Error("ssim: image smaller than 11x11 window");
  double win[kWin][kWin];
  double total = 0.0;
  for (int y = 0; y < kWin; ++y)
    for (int x = 0; x < kWin; ++x) {
      const double dy = y - 5, dx = x - 5;
      win[y][x] = std::exp(-(dy * dy + dx * dx) / (2 * kSigma * kSigma));
      total += win[y][x];
    }
  for (auto& row : win)
    for (double& v : row) v /= total;

  const int ho = a.height() - kWin + 1, wo = a.width() - kWin + 1;
  double acc = 0.0;
  for (int c = 0; c < a.channels(); ++c)
    for (int y = 0; y < ho; ++y)
      for (int x = 0; x < wo; ++x) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int u = 0; u < kWin; ++u)
          for (int v = 0; v < kWin; ++v) {
            const double w = win[u][v];
            const double pa = a.at(c, y + u, x + v), pb = b.at(c, y + u, x + v);
            ma += w * pa;
            mb += w * pb;
            saa += w * pa * pa;
            sbb += w * pb * pb;
            sab += w * pa * pb;
          }
        const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
        const double lum = (2 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        const double cs = (2 * cov + c2) / (va + vb + c2);
        acc += lum * cs;
      }
  return acc / (static_cast<double>(ho) * wo * a.channels());
}

}  // namespace wmlab
