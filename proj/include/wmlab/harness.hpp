#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wmlab/attacks.hpp"
#include "wmlab/codecs.hpp"
#include "wmlab/denoiser.hpp"
#include "wmlab/diffusion.hpp"
#include "wmlab/image.hpp"
#include "wmlab/sampler.hpp"
#include "wmlab/training.hpp"

namespace wmlab {

// ---------------------------------------------------------------- config

/// Flat key=value settings with section prefixes (train., bench., fwm.).
/// '#' starts a comment; blank lines are ignored.
class Config {
 public:
  static Config load(const std::filesystem::path& path);
  static Config parse(const std::string& text);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  std::string get(const std::string& key, const std::string& fallback) const;
  double get(const std::string& key, double fallback) const;
  int get(const std::string& key, int fallback) const;
  std::uint64_t get(const std::string& key, std::uint64_t fallback) const;
  bool get(const std::string& key, bool fallback) const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

/// Applies train.* and arch keys on top of the given defaults.
TrainConfig train_config_from(const Config& cfg, TrainConfig base = {});
ArchDescriptor arch_from(const Config& cfg, ArchDescriptor base = {});

// ---------------------------------------------------------------- corpus

/// Gradient background with a few flat rectangles and discs, values in [0.1, 0.9].
ImageBuffer synth_image(int side, int channels, SeededRng& rng);
std::vector<ImageBuffer> synth_corpus(int n, int side, std::uint64_t seed, int channels = 1);
/// Writes synth_corpus as synth_000.png, synth_001.png, ... into `dir`.
void write_synth_corpus(const std::filesystem::path& dir, int n, int side, std::uint64_t seed,
                        int channels = 1);

/// Center-crop to a square, then bilinear resize to side x side.
ImageBuffer center_crop_resize(const ImageBuffer& img, int side);

/// Supported images of a directory in lexicographic order, loaded on demand.
class Corpus {
 public:
  Corpus(std::vector<std::filesystem::path> files, int side) : files_(std::move(files)), side_(side) {}

  std::size_t size() const { return files_.size(); }
  const std::filesystem::path& path(std::size_t i) const { return files_.at(i); }
  /// Loads image i; side 0 keeps the native size.
  ImageBuffer load(std::size_t i) const;

 private:
  std::vector<std::filesystem::path> files_;
  int side_;
};

Corpus ingest_corpus(const std::filesystem::path& dir, int side = 0);

// ---------------------------------------------------------------- attacks

struct FmdiffSpec {
  std::filesystem::path checkpoint;
  int steps = 10;
  int patch = 64;
  int stride = 0;  ///< 0 means patch / 2
  int t_max = 1000;
  bool use_ema = true;
  bool fwm_inference = false;
  bool clip_x0 = true;
  double beta = 0.6;
  double l_min = 0.0;
  double l_max = 0.0;
};

/// Patch-aggregated sampling conditioned on `img`; unclamped output.
ImageBuffer fmdiff_attack(const ImageBuffer& img, const DenoiserParams& params, const FmdiffSpec& spec,
                          SeededRng& rng);

/// Parameters used for sampling: the EMA shadow when present and requested.
DenoiserParams sampling_params(const Checkpoint& ckpt, bool use_ema);

/// One attack column of a benchmark: a classical spec or the diffusion attack.
struct BenchAttack {
  AttackSpec classical;
  std::optional<FmdiffSpec> fmdiff;

  std::string tag() const;
  double param() const;
};

/// Parses "identity", "gaussian:0.002", "jpeg:50", "fmdiff", "fmdiff:10".
BenchAttack parse_bench_attack(const std::string& text, const FmdiffSpec& fmdiff_defaults);

/// Per-image stream for attack randomness: SeededRng(seed).derive(index).
SeededRng image_stream(std::uint64_t seed, std::size_t index);

/// Watermark used when no file is given.
WatermarkBits default_watermark(std::uint64_t seed);

// ---------------------------------------------------------------- bench

enum class PsnrRef { watermarked, original };

struct BenchSpec {
  std::filesystem::path corpus_dir;
  int synth = 0;  ///< > 0: generate this many synthetic images instead of reading a directory
  int synth_side = 128;
  int side = 0;
  std::vector<CodecScheme> codecs;
  std::vector<BenchAttack> attacks;
  std::optional<std::filesystem::path> watermark;
  std::filesystem::path out_csv;
  std::uint64_t seed = 0;
  PsnrRef psnr_ref = PsnrRef::watermarked;
  bool on_bytes = false;

  void validate() const;
};

struct ReportRow {
  std::string codec;
  std::string attack;
  double param = 0.0;
  int n = 0;
  double psnr_mean = 0.0, psnr_std = 0.0;
  double ber_mean = 0.0, ber_std = 0.0;
  std::uint64_t seed = 0;

  /// Table-style cell, e.g. "45.26/0.3203".
  std::string cell() const;
};

std::string format_cell(double psnr, double ber);

/// Embed -> 8-bit export -> attack -> 8-bit export -> extract, per image and
/// (codec, attack) pair. Rows are sorted by (codec, attack, param).
std::vector<ReportRow> run_bench(const BenchSpec& spec);

std::string csv_header();
std::string csv_line(const ReportRow& row);
void write_csv(const std::vector<ReportRow>& rows, const std::filesystem::path& path);

/// Population mean and standard deviation.
std::pair<double, double> mean_std(const std::vector<double>& xs);

// ---------------------------------------------------------------- gradcheck

struct GradcheckResult {
  std::string name;
  double max_rel_error = 0.0;
  int checked = 0;
  bool passed = false;
};

/// Central-difference checks (h = 1e-4) of every differentiable primitive, the
/// composite L1 + MS-SSIM loss on 8x8 inputs, and sampled denoiser parameters.
std::vector<GradcheckResult> run_gradcheck(std::uint64_t seed, double h = 1e-4, double tol = 1e-4);

// ---------------------------------------------------------------- cli

int cli_dispatch(int argc, char** argv);

}  // namespace wmlab
