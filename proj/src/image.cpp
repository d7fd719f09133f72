#include "wmlab/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace wmlab {

ImageBuffer::ImageBuffer(int height, int width, int channels, double fill)
    : height_(height), width_(width), channels_(channels) {
  if (height <= 0 || width <= 0) throw Error("ImageBuffer: dimensions must be positive");
  if (channels != 1 && channels != 3) throw Error("ImageBuffer: channels must be 1 or 3");
  data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

ImageBuffer::ImageBuffer(int height, int width, int channels, std::vector<double> data)
    : ImageBuffer(height, width, channels) {
  if (data.size() != data_.size()) throw Error("ImageBuffer: data length does not match shape");
  data_ = std::move(data);
}

void ImageBuffer::check_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) throw Error("ImageBuffer: non-finite value");
}

void require_same_shape(const ImageBuffer& a, const ImageBuffer& b, const char* what) {
  if (!a.same_shape(b)) throw Error(std::string(what) + ": image shapes differ");
}

namespace {

void check_rect(const ImageBuffer& img, const PatchRect& r) {
  if (r.size <= 0 || r.top < 0 || r.left < 0 || r.top + r.size > img.height() ||
      r.left + r.size > img.width())
    throw Error("patch rect out of bounds");
}

}  // namespace

ImageBuffer crop(const ImageBuffer& img, const PatchRect& r) {
  check_rect(img, r);
  ImageBuffer out(r.size, r.size, img.channels());
  for (int c = 0; c < img.channels(); ++c)
    for (int y = 0; y < r.size; ++y) {
      const double* src = img.plane(c).data() + static_cast<std::size_t>(r.top + y) * img.width() + r.left;
      std::copy(src, src + r.size, &out.at(c, y, 0));
    }
  return out;
}

void paste(ImageBuffer& img, const ImageBuffer& patch, const PatchRect& r) {
  check_rect(img, r);
  if (patch.height() != r.size || patch.width() != r.size || patch.channels() != img.channels())
    throw Error("paste: patch shape does not match rect");
  for (int c = 0; c < img.channels(); ++c)
    for (int y = 0; y < r.size; ++y) {
      const double* src = patch.plane(c).data() + static_cast<std::size_t>(y) * patch.width();
      std::copy(src, src + r.size, &img.at(c, r.top + y, r.left));
    }
}

std::vector<PatchRect> random_patch_rects(SeededRng& rng, int n, int size, int height,
                                          int width) {
  if (n < 1) throw Error("random_patch_rects: n must be >= 1");
  if (size <= 0 || size > std::min(height, width))
    throw Error("random_patch_rects: patch size exceeds image");
  std::vector<PatchRect> rects;
  rects.reserve(n);
  for (int i = 0; i < n; ++i) {
    const int top = static_cast<int>(rng.uniform_int(0, height - size));
    const int left = static_cast<int>(rng.uniform_int(0, width - size));
    rects.push_back({top, left, size});
  }
  return rects;
}

ImageBuffer normal_image(int height, int width, int channels, SeededRng& rng) {
  ImageBuffer out(height, width, channels);
  for (double& v : out.data()) v = rng.normal();
  return out;
}

ImageBuffer axpy(const ImageBuffer& a, double s, const ImageBuffer& b) {
  require_same_shape(a, b, "axpy");
  ImageBuffer out = a;
  auto& d = out.data();
  const auto& bd = b.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s * bd[i];
  return out;
}

ImageBuffer scaled(const ImageBuffer& a, double s) {
  ImageBuffer out = a;
  for (double& v : out.data()) v *= s;
  return out;
}

double max_abs_diff(const ImageBuffer& a, const ImageBuffer& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

std::uint8_t to_byte(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::floor(c * 255.0 + 0.5));
}

ImageBuffer quantize8(const ImageBuffer& img) {
  ImageBuffer out = img;
  for (double& v : out.data()) v = to_byte(v) / 255.0;
  return out;
}

}  // namespace wmlab
