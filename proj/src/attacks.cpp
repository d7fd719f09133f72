#include "wmlab/attacks.hpp"

#include <algorithm>
#include <cmath>

#include "wmlab/codecs.hpp"

namespace wmlab {

std::string to_string(AttackMethod m) {
  switch (m) {
    case AttackMethod::identity: return "identity";
    case AttackMethod::gaussian: return "gaussian";
    case AttackMethod::speckle: return "speckle";
    case AttackMethod::saltpepper: return "saltpepper";
    case AttackMethod::meanfilter: return "meanfilter";
    case AttackMethod::jpeg: return "jpeg";
  }
  return "?";
}

AttackMethod parse_attack_method(const std::string& tag) {
  for (auto m : {AttackMethod::identity, AttackMethod::gaussian, AttackMethod::speckle,
                 AttackMethod::saltpepper, AttackMethod::meanfilter, AttackMethod::jpeg})
    if (to_string(m) == tag) return m;
  throw Error("unknown attack method '" + tag + "'");
}

void AttackSpec::validate() const {
  switch (method) {
    case AttackMethod::identity: return;
    case AttackMethod::gaussian:
    case AttackMethod::speckle:
      if (!(param > 0.0)) throw Error(to_string(method) + ": variance must be positive");
      return;
    case AttackMethod::saltpepper:
      if (!(param > 0.0 && param < 1.0)) throw Error("saltpepper: density must be in (0, 1)");
      return;
    case AttackMethod::meanfilter: {
      const int k = static_cast<int>(param);
      if (k != param || k < 3 || k % 2 == 0) throw Error("meanfilter: window must be odd and >= 3");
      return;
    }
    case AttackMethod::jpeg: {
      const int q = static_cast<int>(param);
      if (q != param || q < 1 || q > 100) throw Error("jpeg: quality must be an integer in [1, 100]");
      return;
    }
  }
}

const QuantTable& jpeg_base_table() {
  static const QuantTable table = {16, 11, 10, 16, 24,  40,  51,  61,   //
                                   12, 12, 14, 19, 26,  58,  60,  55,   //
                                   14, 13, 16, 24, 40,  57,  69,  56,   //
                                   14, 17, 22, 29, 51,  87,  80,  62,   //
                                   18, 22, 37, 56, 68,  109, 103, 77,   //
                                   24, 35, 55, 64, 81,  104, 113, 92,   //
                                   49, 64, 78, 87, 103, 121, 120, 101,  //
                                   72, 92, 95, 98, 112, 100, 103, 99};
  return table;
}

QuantTable jpeg_quant_table(int quality) {
  if (quality < 1 || quality > 100) throw Error("jpeg_quant_table: quality must be in [1, 100]");
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  QuantTable q{};
  const auto& base = jpeg_base_table();
  for (int i = 0; i < 64; ++i)
    q[i] = std::max(1, static_cast<int>(std::floor((base[i] * scale) / 100.0 + 0.5)));
  return q;
}

namespace {

ImageBuffer clamp01(ImageBuffer img) {
  for (double& v : img.data()) v = std::clamp(v, 0.0, 1.0);
  return img;
}

ImageBuffer mean_filter(const ImageBuffer& img, int k) {
  const int r = k / 2, h = img.height(), w = img.width();
  ImageBuffer out(h, w, img.channels());
  const double inv = 1.0 / (k * k);
  for (int c = 0; c < img.channels(); ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double s = 0.0;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx)
            s += img.at(c, std::clamp(y + dy, 0, h - 1), std::clamp(x + dx, 0, w - 1));
        out.at(c, y, x) = s * inv;
      }
  return out;
}

ImageBuffer jpeg_like(const ImageBuffer& img, int quality) {
  const QuantTable q = jpeg_quant_table(quality);
  const int h = img.height(), w = img.width();
  ImageBuffer out(h, w, img.channels());
  std::vector<double> block(64);
  for (int c = 0; c < img.channels(); ++c)
    for (int by = 0; by < h; by += 8)
      for (int bx = 0; bx < w; bx += 8) {
        // Partial edge blocks are padded by edge replication.
        for (int r = 0; r < 8; ++r)
          for (int s = 0; s < 8; ++s)
            block[r * 8 + s] =
                255.0 * img.at(c, std::min(by + r, h - 1), std::min(bx + s, w - 1)) - 128.0;
        auto coeffs = dct_block(block, 8);
        for (int i = 0; i < 64; ++i) coeffs[i] = std::round(coeffs[i] / q[i]) * q[i];
        const auto rec = idct_block(coeffs, 8);
        for (int r = 0; r < 8 && by + r < h; ++r)
          for (int s = 0; s < 8 && bx + s < w; ++s) out.at(c, by + r, bx + s) = (rec[r * 8 + s] + 128.0) / 255.0;
      }
  return out;
}

}  // namespace

ImageBuffer apply_attack(const ImageBuffer& img, const AttackSpec& spec, SeededRng& rng) {
  spec.validate();
  ImageBuffer out = img;
  switch (spec.method) {
    case AttackMethod::identity:
      break;
    case AttackMethod::gaussian: {
      const double sd = std::sqrt(spec.param);
      for (double& v : out.data()) v += sd * rng.normal();
      break;
    }
    case AttackMethod::speckle: {
      const double sd = std::sqrt(spec.param);
      for (double& v : out.data()) v += v * sd * rng.normal();
      break;
    }
    case AttackMethod::saltpepper:
      // Pixel positions are corrupted jointly across channels.
      for (std::size_t i = 0; i < img.plane_size(); ++i) {
        if (rng.uniform() >= spec.param) continue;
        const double v = rng.uniform() < 0.5 ? 0.0 : 1.0;
        for (int c = 0; c < img.channels(); ++c) out.plane(c)[i] = v;
      }
      break;
    case AttackMethod::meanfilter:
      out = mean_filter(img, static_cast<int>(spec.param));
      break;
    case AttackMethod::jpeg:
      out = jpeg_like(img, static_cast<int>(spec.param));
      break;
  }
  return clamp01(std::move(out));
}

ImageBuffer apply_attack(const ImageBuffer& img, const AttackSpec& spec) {
  SeededRng rng(spec.seed);
  return apply_attack(img, spec, rng);
}

}  // namespace wmlab
