#pragma once

#include <filesystem>

#include "wmlab/image.hpp"

namespace wmlab {

/// Reads an 8-bit grayscale or RGB image (PNG, binary PGM P5, binary PPM P6).
/// Bytes are mapped to v / 255. The format is chosen by file signature.
ImageBuffer load_image(const std::filesystem::path& path);

/// Writes with clamping to [0, 1] and round-half-up 8-bit quantization.
/// The format follows the extension: .png (1 or 3 channels), .pgm (1 channel),
/// .ppm (3 channels).
void save_image(const ImageBuffer& img, const std::filesystem::path& path);

bool is_supported_image(const std::filesystem::path& path);

}  // namespace wmlab
