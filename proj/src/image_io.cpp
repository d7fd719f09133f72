#include "wmlab/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

namespace wmlab {

namespace {

std::string lower_ext(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e;
}

ImageBuffer from_interleaved(const std::vector<std::uint8_t>& bytes, int h, int w, int c) {
  ImageBuffer img(h, w, c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch)
        img.at(ch, y, x) = bytes[(static_cast<std::size_t>(y) * w + x) * c + ch] / 255.0;
  return img;
}

std::vector<std::uint8_t> to_interleaved(const ImageBuffer& img) {
  const int h = img.height(), w = img.width(), c = img.channels();
  std::vector<std::uint8_t> bytes(img.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch)
        bytes[(static_cast<std::size_t>(y) * w + x) * c + ch] = to_byte(img.at(ch, y, x));
  return bytes;
}

// Netpbm header token, skipping whitespace and '#' comments.
int read_pnm_int(std::istream& in) {
  int ch = in.get();
  for (;;) {
    if (ch == '#') {
      while (ch != '\n' && ch != EOF) ch = in.get();
    } else if (std::isspace(ch)) {
      ch = in.get();
    } else {
      break;
    }
  }
  if (!std::isdigit(ch)) throw Error("malformed PNM header");
  long v = 0;
  while (std::isdigit(ch)) {
    v = v * 10 + (ch - '0');
    if (v > 1 << 20) throw Error("PNM header value too large");
    ch = in.get();
  }
  // Exactly one whitespace byte separates the header from the raster.
  if (!std::isspace(ch)) throw Error("malformed PNM header");
  return static_cast<int>(v);
}

ImageBuffer load_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  char magic[2];
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
    throw Error("unsupported PNM variant in " + path.string());
  const int channels = magic[1] == '5' ? 1 : 3;
  const int w = read_pnm_int(in);
  const int h = read_pnm_int(in);
  const int maxval = read_pnm_int(in);
  if (maxval != 255) throw Error("unsupported bit depth (maxval != 255) in " + path.string());
  if (w <= 0 || h <= 0) throw Error("empty image in " + path.string());
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(w) * h * channels);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size())
    throw Error("truncated raster in " + path.string());
  return from_interleaved(bytes, h, w, channels);
}

ImageBuffer load_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str()))
    throw Error("cannot read PNG " + path.string() + ": " + image.message);
  const bool alpha = image.format & PNG_FORMAT_FLAG_ALPHA;
  const bool wide = image.format & PNG_FORMAT_FLAG_LINEAR;
  if (alpha || wide) {
    png_image_free(&image);
    throw Error("unsupported PNG channel layout or bit depth in " + path.string());
  }
  const int channels = (image.format & PNG_FORMAT_FLAG_COLOR) ? 3 : 1;
  image.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, bytes.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw Error("cannot decode PNG " + path.string() + ": " + msg);
  }
  return from_interleaved(bytes, static_cast<int>(image.height), static_cast<int>(image.width),
                          channels);
}

void save_png(const ImageBuffer& img, const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = img.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const auto bytes = to_interleaved(img);
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, bytes.data(), 0, nullptr))
    throw Error("cannot write PNG " + path.string() + ": " + image.message);
}

void save_pnm(const ImageBuffer& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << (img.channels() == 1 ? "P5" : "P6") << '\n'
      << img.width() << ' ' << img.height() << '\n'
      << 255 << '\n';
  const auto bytes = to_interleaved(img);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace

ImageBuffer load_image(const std::filesystem::path& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw Error("cannot open " + path.string());
  unsigned char sig[8] = {};
  probe.read(reinterpret_cast<char*>(sig), 8);
  const auto got = probe.gcount();
  probe.close();
  if (got == 8 && png_sig_cmp(sig, 0, 8) == 0) return load_png(path);
  if (got >= 2 && sig[0] == 'P') return load_pnm(path);
  throw Error("unrecognized image format: " + path.string());
}

void save_image(const ImageBuffer& img, const std::filesystem::path& path) {
  if (img.empty()) throw Error("save_image: empty image");
  const std::string ext = lower_ext(path);
  if (ext == ".png") return save_png(img, path);
  if (ext == ".pgm") {
    if (img.channels() != 1) throw Error("PGM output requires a single channel");
    return save_pnm(img, path);
  }
  if (ext == ".ppm") {
    if (img.channels() != 3) throw Error("PPM output requires three channels");
    return save_pnm(img, path);
  }
  throw Error("unsupported output extension: " + path.string());
}

bool is_supported_image(const std::filesystem::path& path) {
  const std::string ext = lower_ext(path);
  return ext == ".png" || ext == ".pgm" || ext == ".ppm";
}

}  // namespace wmlab
