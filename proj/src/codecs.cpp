#include "wmlab/codecs.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <tuple>

#include "wmlab/image_io.hpp"
#include "wmlab/spectral.hpp"

namespace wmlab {

// ---------------------------------------------------------------- watermark bits

void WatermarkBits::validate() const {
  if (bits.size() != kCount) throw Error("watermark must hold exactly 256 bits");
  for (auto b : bits)
    if (b > 1) throw Error("watermark bits must be 0 or 1");
}

WatermarkBits WatermarkBits::random(SeededRng& rng) {
  WatermarkBits wm;
  for (auto& b : wm.bits) b = static_cast<std::uint8_t>(rng.next_u64() >> 63);
  return wm;
}

WatermarkBits load_watermark(const std::filesystem::path& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw Error("cannot open watermark file " + path.string());
  if (probe.peek() == 'P') {
    probe.close();
    const ImageBuffer img = load_image(path);
    if (img.height() != WatermarkBits::kSide || img.width() != WatermarkBits::kSide || img.channels() != 1)
      throw Error("watermark PGM must be 16x16 grayscale");
    WatermarkBits wm;
    for (int i = 0; i < WatermarkBits::kCount; ++i) {
      const auto byte = to_byte(img.data()[i]);
      if (byte != 0 && byte != 255) throw Error("watermark PGM values must be 0 or 255");
      wm.bits[i] = byte == 255;
    }
    return wm;
  }
  WatermarkBits wm;
  std::string line;
  int row = 0;
  std::size_t pos = 0;
  while (std::getline(probe, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.size() != 8 || row >= 32) throw Error("watermark text must be 32 lines of 8 bits");
    for (char ch : line) {
      if (ch != '0' && ch != '1') throw Error("watermark text may only contain '0' and '1'");
      wm.bits[pos++] = ch == '1';
    }
    ++row;
  }
  if (row != 32) throw Error("watermark text must be 32 lines of 8 bits");
  return wm;
}

void save_watermark(const WatermarkBits& wm, const std::filesystem::path& path) {
  wm.validate();
  std::ofstream out(path);
  if (!out) throw Error("cannot write watermark file " + path.string());
  for (int i = 0; i < WatermarkBits::kCount; ++i) {
    out << static_cast<char>('0' + wm.bits[i]);
    if (i % 8 == 7) out << '\n';
  }
}

// ---------------------------------------------------------------- config

std::string to_string(CodecScheme s) {
  switch (s) {
    case CodecScheme::lsb: return "lsb";
    case CodecScheme::dct: return "dct";
    case CodecScheme::dft: return "dft";
  }
  return "?";
}

CodecScheme parse_codec_scheme(const std::string& tag) {
  if (tag == "lsb") return CodecScheme::lsb;
  if (tag == "dct") return CodecScheme::dct;
  if (tag == "dft") return CodecScheme::dft;
  throw Error("unknown codec '" + tag + "' (expected lsb, dct, dft)");
}

void CodecConfig::validate() const {
  if (lsb_plane < 0 || lsb_plane > 7) throw Error("lsb bit plane must be in [0, 7]");
  if (lsb_replication < 0) throw Error("lsb replication must be nonnegative");
  const auto in_block = [this](int u) { return u >= 0 && u < dct_block; };
  if (dct_block < 2 || !in_block(dct_u1) || !in_block(dct_v1) || !in_block(dct_u2) || !in_block(dct_v2) ||
      (dct_u1 == dct_u2 && dct_v1 == dct_v2))
    throw Error("invalid DCT coefficient pair");
  if (!(dct_margin > 0.0)) throw Error("DCT margin must be positive");
  if (!(dft_radius > 0.0 && dft_radius < 1.0)) throw Error("DFT ring radius must be in (0, 1)");
  if (!(dft_strength > 0.0)) throw Error("DFT strength must be positive");
}

// ---------------------------------------------------------------- helpers

std::vector<double> luminance(const ImageBuffer& img) {
  if (img.channels() == 1) return {img.data().begin(), img.data().end()};
  std::vector<double> y(img.plane_size());
  const auto r = img.plane(0), g = img.plane(1), b = img.plane(2);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
  return y;
}

namespace {

// Adds the luminance change to every channel; the weights sum to one, so the
// chrominance differences (B - Y, R - Y) are untouched.
ImageBuffer apply_luma(const ImageBuffer& img, const std::vector<double>& y_old,
                       const std::vector<double>& y_new) {
  ImageBuffer out = img;
  for (int c = 0; c < img.channels(); ++c) {
    auto p = out.plane(c);
    if (img.channels() == 1) {
      std::copy(y_new.begin(), y_new.end(), p.begin());
    } else {
      for (std::size_t i = 0; i < p.size(); ++i) p[i] += y_new[i] - y_old[i];
    }
  }
  return out;
}

std::vector<std::size_t> keyed_permutation(std::size_t n, std::uint64_t key, std::uint64_t salt) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  SeededRng rng = SeededRng(key).derive(salt);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  return idx;
}

// ---- LSB

std::vector<std::size_t> lsb_sites(const ImageBuffer& img, const CodecConfig& cfg, int& reps) {
  const std::size_t hw = img.plane_size();
  const std::size_t cap = hw / WatermarkBits::kCount;
  if (cap < 1) throw Error("LSB capacity shortfall: image has fewer than 256 pixels");
  reps = cfg.lsb_replication == 0 ? static_cast<int>(cap) : cfg.lsb_replication;
  if (static_cast<std::size_t>(reps) > cap) throw Error("LSB capacity shortfall for requested replication");
  auto perm = keyed_permutation(hw, cfg.key, 0x15B);
  perm.resize(static_cast<std::size_t>(reps) * WatermarkBits::kCount);
  return perm;
}

ImageBuffer lsb_embed(const ImageBuffer& img, const WatermarkBits& wm, const CodecConfig& cfg) {
  int reps = 0;
  const auto sites = lsb_sites(img, cfg, reps);
  const auto y = luminance(img);
  auto y_new = y;
  const unsigned mask = 1u << cfg.lsb_plane;
  for (std::size_t s = 0; s < sites.size(); ++s) {
    const std::size_t px = sites[s];
    const unsigned byte = to_byte(y[px]);
    const unsigned bit = wm.bits[s % WatermarkBits::kCount];
    const unsigned out = (byte & ~mask) | (bit ? mask : 0u);
    y_new[px] = out / 255.0;
  }
  return apply_luma(img, y, y_new);
}

WatermarkBits lsb_extract(const ImageBuffer& img, const CodecConfig& cfg) {
  int reps = 0;
  const auto sites = lsb_sites(img, cfg, reps);
  const auto y = luminance(img);
  std::vector<int> votes(WatermarkBits::kCount, 0);
  for (std::size_t s = 0; s < sites.size(); ++s) {
    const unsigned byte = to_byte(y[sites[s]]);
    votes[s % WatermarkBits::kCount] += ((byte >> cfg.lsb_plane) & 1u) ? 1 : -1;
  }
  WatermarkBits wm;
  for (int i = 0; i < WatermarkBits::kCount; ++i) wm.bits[i] = votes[i] > 0;
  return wm;
}

// ---- block DCT

const std::vector<double>& dct_matrix(int n) {
  thread_local std::vector<std::vector<double>> cache(64);
  if (n < 1 || n >= 64) throw Error("DCT block size out of range");
  auto& m = cache[n];
  if (m.empty()) {
    m.resize(static_cast<std::size_t>(n) * n);
    for (int k = 0; k < n; ++k)
      for (int i = 0; i < n; ++i) {
        const double s = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
        m[k * n + i] = s * std::cos(std::numbers::pi * (2 * i + 1) * k / (2.0 * n));
      }
  }
  return m;
}

std::vector<std::size_t> dct_blocks(const ImageBuffer& img, const CodecConfig& cfg) {
  const int bx = img.width() / cfg.dct_block, by = img.height() / cfg.dct_block;
  const std::size_t nblocks = static_cast<std::size_t>(bx) * by;
  if (nblocks < WatermarkBits::kCount)
    throw Error("DCT capacity shortfall: need 256 blocks of " + std::to_string(cfg.dct_block) + "x" +
                std::to_string(cfg.dct_block));
  auto perm = keyed_permutation(nblocks, cfg.key, 0xDC7);
  perm.resize(WatermarkBits::kCount);
  return perm;
}

std::vector<double> read_block(const std::vector<double>& y, int width, int top, int left, int n) {
  std::vector<double> b(static_cast<std::size_t>(n) * n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) b[r * n + c] = y[static_cast<std::size_t>(top + r) * width + left + c];
  return b;
}

ImageBuffer dct_embed(const ImageBuffer& img, const WatermarkBits& wm, const CodecConfig& cfg) {
  const auto blocks = dct_blocks(img, cfg);
  const int n = cfg.dct_block, bx = img.width() / n, w = img.width();
  const auto y = luminance(img);
  auto y_new = y;
  const int i1 = cfg.dct_u1 * n + cfg.dct_v1, i2 = cfg.dct_u2 * n + cfg.dct_v2;
  for (int bit = 0; bit < WatermarkBits::kCount; ++bit) {
    const int top = static_cast<int>(blocks[bit] / bx) * n, left = static_cast<int>(blocks[bit] % bx) * n;
    const auto coeffs = dct_block(read_block(y, w, top, left, n), n);
    const double c1 = coeffs[i1], c2 = coeffs[i2];
    const double want = wm.bits[bit] ? c1 - c2 : c2 - c1;
    if (want >= cfg.dct_margin) continue;
    const double mid = 0.5 * (c1 + c2);
    const double half = 0.5 * cfg.dct_margin;
    std::vector<double> delta(static_cast<std::size_t>(n) * n, 0.0);
    delta[i1] = (wm.bits[bit] ? mid + half : mid - half) - c1;
    delta[i2] = (wm.bits[bit] ? mid - half : mid + half) - c2;
    const auto spatial = idct_block(delta, n);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) y_new[static_cast<std::size_t>(top + r) * w + left + c] += spatial[r * n + c];
  }
  return apply_luma(img, y, y_new);
}

WatermarkBits dct_extract(const ImageBuffer& img, const CodecConfig& cfg) {
  const auto blocks = dct_blocks(img, cfg);
  const int n = cfg.dct_block, bx = img.width() / n, w = img.width();
  const auto y = luminance(img);
  const int i1 = cfg.dct_u1 * n + cfg.dct_v1, i2 = cfg.dct_u2 * n + cfg.dct_v2;
  WatermarkBits wm;
  for (int bit = 0; bit < WatermarkBits::kCount; ++bit) {
    const int top = static_cast<int>(blocks[bit] / bx) * n, left = static_cast<int>(blocks[bit] % bx) * n;
    const auto coeffs = dct_block(read_block(y, w, top, left, n), n);
    wm.bits[bit] = coeffs[i1] > coeffs[i2];
  }
  return wm;
}

// ---- DFT ring

struct RingBin {
  int fy, fx;  // signed frequencies
};

std::size_t bin_index(int fy, int fx, int h, int w) {
  return static_cast<std::size_t>((fy + h) % h) * w + static_cast<std::size_t>((fx + w) % w);
}

// Even-lattice bins nearest the target ring, upper half-plane only. Their eight
// neighbours all have an odd coordinate, so embedding never touches a median.
std::vector<RingBin> ring_bins(int h, int w, const CodecConfig& cfg) {
  if (h % 2 || w % 2) throw Error("DFT codec requires even image dimensions");
  const double target = cfg.dft_radius * 0.5;
  std::vector<std::tuple<double, int, int>> cand;
  for (int fy = -h / 2 + 1; fy < h / 2; ++fy)
    for (int fx = 0; fx < w / 2; fx += 2) {
      if (fy % 2 != 0) continue;
      if (fx == 0 && fy <= 0) continue;
      if (fy == 0 && fx == 0) continue;
      const double r = std::hypot(static_cast<double>(fy) / h, static_cast<double>(fx) / w);
      cand.emplace_back(std::abs(r - target), fy, fx);
    }
  if (cand.size() < WatermarkBits::kCount) throw Error("DFT capacity shortfall for this image size");
  std::sort(cand.begin(), cand.end());
  std::vector<RingBin> bins;
  for (int i = 0; i < WatermarkBits::kCount; ++i) bins.push_back({std::get<1>(cand[i]), std::get<2>(cand[i])});
  const auto perm = keyed_permutation(bins.size(), cfg.key, 0xDF7);
  std::vector<RingBin> out(bins.size());
  for (std::size_t i = 0; i < bins.size(); ++i) out[i] = bins[perm[i]];
  return out;
}

double neighbour_median(const std::vector<double>& amp, const RingBin& b, int h, int w) {
  double v[8];
  int k = 0;
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx)
      if (dy || dx) v[k++] = amp[bin_index(b.fy + dy, b.fx + dx, h, w)];
  std::sort(v, v + 8);
  return 0.5 * (v[3] + v[4]);
}

ImageBuffer dft_embed(const ImageBuffer& img, const WatermarkBits& wm, const CodecConfig& cfg) {
  const int h = img.height(), w = img.width();
  const auto bins = ring_bins(h, w, cfg);
  const auto y = luminance(img);
  SpectralPlane p = dft2(y, h, w);
  std::vector<double> amp(p.size());
  for (std::size_t i = 0; i < amp.size(); ++i) amp[i] = std::hypot(p.real[i], p.imag[i]);
  auto set_amplitude = [&](int fy, int fx, double target) {
    const std::size_t i = bin_index(fy, fx, h, w), j = bin_index(-fy, -fx, h, w);
    if (i == j) return;
    double re = 1.0, im = 0.0;
    if (amp[i] > 0.0) {
      re = p.real[i] / amp[i];
      im = p.imag[i] / amp[i];
    }
    p.real[i] = target * re;
    p.imag[i] = target * im;
    p.real[j] = p.real[i];
    p.imag[j] = -p.imag[i];
    amp[i] = amp[j] = target;
  };
  // A zero bit needs room below the median; lift quiet neighbourhoods to half the strength.
  const double floor = 0.5 * cfg.dft_strength;
  for (int bit = 0; bit < WatermarkBits::kCount; ++bit) {
    const RingBin& b = bins[bit];
    if (wm.bits[bit] || neighbour_median(amp, b, h, w) >= floor) continue;
    std::vector<std::pair<double, std::pair<int, int>>> nb;
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx)
        if (dy || dx) nb.push_back({amp[bin_index(b.fy + dy, b.fx + dx, h, w)], {b.fy + dy, b.fx + dx}});
    std::sort(nb.begin(), nb.end());
    for (std::size_t k = 3; k < nb.size(); ++k)
      if (nb[k].first < floor) set_amplitude(nb[k].second.first, nb[k].second.second, floor);
  }
  for (int bit = 0; bit < WatermarkBits::kCount; ++bit) {
    const RingBin& b = bins[bit];
    const double m = neighbour_median(amp, b, h, w);
    const std::size_t i = bin_index(b.fy, b.fx, h, w);
    double target = amp[i];
    if (wm.bits[bit] && amp[i] < m + cfg.dft_strength) target = m + cfg.dft_strength;
    if (!wm.bits[bit] && amp[i] > std::max(m - cfg.dft_strength, 0.0)) target = std::max(m - cfg.dft_strength, 0.0);
    if (target != amp[i]) set_amplitude(b.fy, b.fx, target);
  }
  return apply_luma(img, y, idft2(p));
}

WatermarkBits dft_extract(const ImageBuffer& img, const CodecConfig& cfg) {
  const int h = img.height(), w = img.width();
  const auto bins = ring_bins(h, w, cfg);
  const SpectralPlane p = dft2(luminance(img), h, w);
  std::vector<double> amp(p.size());
  for (std::size_t i = 0; i < amp.size(); ++i) amp[i] = std::hypot(p.real[i], p.imag[i]);
  WatermarkBits wm;
  for (int bit = 0; bit < WatermarkBits::kCount; ++bit)
    wm.bits[bit] = amp[bin_index(bins[bit].fy, bins[bit].fx, h, w)] > neighbour_median(amp, bins[bit], h, w);
  return wm;
}

}  // namespace

std::vector<double> dct_block(const std::vector<double>& block, int n) {
  const auto& m = dct_matrix(n);
  if (block.size() != static_cast<std::size_t>(n) * n) throw Error("dct_block: size mismatch");
  std::vector<double> tmp(block.size(), 0.0), out(block.size(), 0.0);
  for (int k = 0; k < n; ++k)
    for (int c = 0; c < n; ++c)
      for (int i = 0; i < n; ++i) tmp[k * n + c] += m[k * n + i] * block[i * n + c];
  for (int r = 0; r < n; ++r)
    for (int k = 0; k < n; ++k)
      for (int j = 0; j < n; ++j) out[r * n + k] += tmp[r * n + j] * m[k * n + j];
  return out;
}

std::vector<double> idct_block(const std::vector<double>& coeffs, int n) {
  const auto& m = dct_matrix(n);
  if (coeffs.size() != static_cast<std::size_t>(n) * n) throw Error("idct_block: size mismatch");
  std::vector<double> tmp(coeffs.size(), 0.0), out(coeffs.size(), 0.0);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < n; ++c)
      for (int k = 0; k < n; ++k) tmp[i * n + c] += m[k * n + i] * coeffs[k * n + c];
  for (int r = 0; r < n; ++r)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) out[r * n + j] += tmp[r * n + k] * m[k * n + j];
  return out;
}

ImageBuffer embed(const ImageBuffer& img, const WatermarkBits& wm, const CodecConfig& cfg) {
  cfg.validate();
  wm.validate();
  switch (cfg.scheme) {
    case CodecScheme::lsb: return lsb_embed(img, wm, cfg);
    case CodecScheme::dct: return dct_embed(img, wm, cfg);
    case CodecScheme::dft: return dft_embed(img, wm, cfg);
  }
  throw Error("unknown codec scheme");
}

WatermarkBits extract(const ImageBuffer& img, const CodecConfig& cfg) {
  cfg.validate();
  switch (cfg.scheme) {
    case CodecScheme::lsb: return lsb_extract(img, cfg);
    case CodecScheme::dct: return dct_extract(img, cfg);
    case CodecScheme::dft: return dft_extract(img, cfg);
  }
  throw Error("unknown codec scheme");
}

}  // namespace wmlab
