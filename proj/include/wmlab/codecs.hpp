#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "wmlab/image.hpp"
#include "wmlab/rng.hpp"

namespace wmlab {

/// 16x16 binary watermark, row-major, one byte per bit.
struct WatermarkBits {
  static constexpr int kSide = 16;
  static constexpr int kCount = kSide * kSide;

  std::vector<std::uint8_t> bits = std::vector<std::uint8_t>(kCount, 0);

  void validate() const;
  static WatermarkBits random(SeededRng& rng);

  friend bool operator==(const WatermarkBits&, const WatermarkBits&) = default;
};

/// Text form: 32 lines of 8 '0'/'1' characters. A 16x16 PGM with 0/255 is also accepted.
WatermarkBits load_watermark(const std::filesystem::path& path);
void save_watermark(const WatermarkBits& wm, const std::filesystem::path& path);

enum class CodecScheme { lsb, dct, dft };

std::string to_string(CodecScheme s);
CodecScheme parse_codec_scheme(const std::string& tag);

struct CodecConfig {
  CodecScheme scheme = CodecScheme::lsb;
  /// Secret layout key: selects LSB sites, DCT blocks, and DFT bin order.
  std::uint64_t key = 0;

  int lsb_plane = 0;
  /// Replicas per bit; 0 means floor(H * W / 256).
  int lsb_replication = 0;

  int dct_block = 8;
  int dct_u1 = 2, dct_v1 = 3;
  int dct_u2 = 3, dct_v2 = 2;
  double dct_margin = 0.02;

  /// Ring radius as a fraction of the Nyquist frequency.
  double dft_radius = 0.35;
  /// Absolute magnitude margin above/below the neighbourhood median.
  double dft_strength = 0.03;

  void validate() const;
};

/// Blind embedding on the luminance plane (ITU-R 601 weights for RGB).
ImageBuffer embed(const ImageBuffer& img, const WatermarkBits& wm, const CodecConfig& cfg);

/// Blind extraction; always returns 256 bits.
WatermarkBits extract(const ImageBuffer& img, const CodecConfig& cfg);

/// Orthonormal 2-D DCT-II of an n x n block (row-major) and its inverse.
std::vector<double> dct_block(const std::vector<double>& block, int n);
std::vector<double> idct_block(const std::vector<double>& coeffs, int n);

std::vector<double> luminance(const ImageBuffer& img);

}  // namespace wmlab
