#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "wmlab/rng.hpp"

namespace wmlab {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// H x W x C image of real intensities, channel-planar and row-major.
///
/// Nominal range is [0, 1]. Values outside that range are allowed while an image
/// is in flight through the diffusion pipeline and are only clamped on export.
class ImageBuffer {
 public:
  ImageBuffer() = default;
  ImageBuffer(int height, int width, int channels, double fill = 0.0);
  ImageBuffer(int height, int width, int channels, std::vector<double> data);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t size() const { return data_.size(); }
  std::size_t plane_size() const { return static_cast<std::size_t>(height_) * width_; }
  bool empty() const { return data_.empty(); }

  double& at(int c, int y, int x) { return data_[index(c, y, x)]; }
  double at(int c, int y, int x) const { return data_[index(c, y, x)]; }

  std::span<double> plane(int c) { return {data_.data() + c * plane_size(), plane_size()}; }
  std::span<const double> plane(int c) const {
    return {data_.data() + c * plane_size(), plane_size()};
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const ImageBuffer& o) const {
    return height_ == o.height_ && width_ == o.width_ && channels_ == o.channels_;
  }

  /// Throws if any value is NaN or infinite.
  void check_finite() const;

  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

struct PatchRect {
  int top = 0;
  int left = 0;
  int size = 0;

  friend bool operator==(const PatchRect&, const PatchRect&) = default;
};

void require_same_shape(const ImageBuffer& a, const ImageBuffer& b, const char* what);

ImageBuffer crop(const ImageBuffer& img, const PatchRect& r);

/// Writes `patch` into `img` at `r`; the inverse of crop at the same rect.
void paste(ImageBuffer& img, const ImageBuffer& patch, const PatchRect& r);

std::vector<PatchRect> random_patch_rects(SeededRng& rng, int n, int size, int height, int width);

/// Fills an image of the given shape with independent standard normal draws.
ImageBuffer normal_image(int height, int width, int channels, SeededRng& rng);

/// a + s * b, elementwise.
ImageBuffer axpy(const ImageBuffer& a, double s, const ImageBuffer& b);
ImageBuffer scaled(const ImageBuffer& a, double s);
double max_abs_diff(const ImageBuffer& a, const ImageBuffer& b);

/// Clamp to [0,1], quantize with round-half-up to 8 bits, map back to v/255.
ImageBuffer quantize8(const ImageBuffer& img);
std::uint8_t to_byte(double v);

}  // namespace wmlab
