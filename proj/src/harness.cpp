#include "wmlab/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "wmlab/image_io.hpp"
#include "wmlab/metrics.hpp"

namespace wmlab {

// ---------------------------------------------------------------- config

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

Config Config::parse(const std::string& text) {
  Config c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || trim(line.substr(0, eq)).empty())
      throw Error("config line " + std::to_string(lineno) + ": expected key=value");
    c.values_[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return c;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string Config::get(const std::string& key, const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double Config::get(const std::string& key, double fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used == it->second.size()) return v;
  } catch (const std::exception&) {
  }
  throw Error("config key " + key + ": '" + it->second + "' is not a number");
}

int Config::get(const std::string& key, int fallback) const {
  const double v = get(key, static_cast<double>(fallback));
  if (v != std::floor(v)) throw Error("config key " + key + " must be an integer");
  return static_cast<int>(v);
}

std::uint64_t Config::get(const std::string& key, std::uint64_t fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t used = 0;
    const auto v = std::stoull(it->second, &used);
    if (used == it->second.size()) return v;
  } catch (const std::exception&) {
  }
  throw Error("config key " + key + ": '" + it->second + "' is not an unsigned integer");
}

bool Config::get(const std::string& key, bool fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string& v = it->second;
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw Error("config key " + key + ": '" + v + "' is not on/off");
}

TrainConfig train_config_from(const Config& c, TrainConfig t) {
  t.transition_iter = c.get("train.K", t.transition_iter);
  t.total_iters = c.get("train.total_iters", t.total_iters);
  t.batch_size = c.get("train.batch_size", t.batch_size);
  t.patches_per_image = c.get("train.patches_per_image", t.patches_per_image);
  t.patch_size = c.get("train.patch_size", t.patch_size);
  t.s_train = c.get("train.s_train", t.s_train);
  const std::string grid = c.get("train.grid", std::string(t.spacing == GridSpacing::sampling ? "sampling" : "training"));
  if (grid != "sampling" && grid != "training") throw Error("train.grid must be training or sampling");
  t.spacing = grid == "sampling" ? GridSpacing::sampling : GridSpacing::training;
  t.mask_beta = c.get("train.mask_beta", c.get("fwm.beta", t.mask_beta));
  t.l_min = c.get("train.l_min", c.get("fwm.l_min", t.l_min));
  t.l_max = c.get("train.l_max", c.get("fwm.l_max", t.l_max));
  t.lr = c.get("train.lr", t.lr);
  t.stage2_lr = c.get("train.stage2_lr", t.stage2_lr);
  t.ema_decay = c.get("train.ema_decay", t.ema_decay);
  t.seed = c.get("train.seed", t.seed);
  t.window = c.get("train.window", t.window);
  t.clip_x0 = c.get("train.clip_x0", t.clip_x0);
  t.msssim_scales = c.get("train.msssim_scales", t.msssim_scales);
  t.checkpoint_every = c.get("train.checkpoint_every", t.checkpoint_every);
  t.checkpoint_path = c.get("train.checkpoint", t.checkpoint_path.string());
  t.log_path = c.get("train.log", t.log_path.string());
  return t;
}

ArchDescriptor arch_from(const Config& c, ArchDescriptor a) {
  a.channels = c.get("train.arch.channels", a.channels);
  a.levels = c.get("train.arch.levels", a.levels);
  a.base_width = c.get("train.arch.base_width", a.base_width);
  a.kernel = c.get("train.arch.kernel", a.kernel);
  a.groups = c.get("train.arch.groups", a.groups);
  a.temb_dim = c.get("train.arch.temb_dim", a.temb_dim);
  a.zero_output = c.get("train.arch.zero_output", a.zero_output);
  a.validate();
  return a;
}

// ---------------------------------------------------------------- corpus

ImageBuffer synth_image(int side, int channels, SeededRng& rng) {
  if (side < 8) throw Error("synth_image: side must be at least 8");
  ImageBuffer img(side, side, channels);
  const double theta = 2.0 * std::numbers::pi * rng.uniform();
  const double ct = std::cos(theta), st = std::sin(theta);
  for (int c = 0; c < channels; ++c) {
    const double lo = 0.2 + 0.2 * rng.uniform();
    const double hi = 0.6 + 0.2 * rng.uniform();
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) {
        const double u = ((x - side / 2.0) * ct + (y - side / 2.0) * st) / (side * std::numbers::sqrt2) + 0.5;
        img.at(c, y, x) = lo + (hi - lo) * u;
      }
  }
  const int shapes = 3 + static_cast<int>(rng.below(3));
  for (int k = 0; k < shapes; ++k) {
    const bool disc = rng.uniform() < 0.5;
    const double size = side * (0.1 + 0.3 * rng.uniform());
    const double cy = side * rng.uniform(), cx = side * rng.uniform();
    std::vector<double> value(channels);
    for (double& v : value) v = 0.1 + 0.8 * rng.uniform();
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) {
        const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
        const bool inside = disc ? dy * dy + dx * dx <= size * size / 4.0
                                 : std::abs(dy) <= size / 2.0 && std::abs(dx) <= size / 2.0;
        if (!inside) continue;
        for (int c = 0; c < channels; ++c) img.at(c, y, x) = value[c];
      }
  }
  return quantize8(img);
}

std::vector<ImageBuffer> synth_corpus(int n, int side, std::uint64_t seed, int channels) {
  std::vector<ImageBuffer> out;
  for (int i = 0; i < n; ++i) {
    SeededRng rng = SeededRng(seed).derive(static_cast<std::uint64_t>(i));
    out.push_back(synth_image(side, channels, rng));
  }
  return out;
}

void write_synth_corpus(const std::filesystem::path& dir, int n, int side, std::uint64_t seed, int channels) {
  std::filesystem::create_directories(dir);
  const auto imgs = synth_corpus(n, side, seed, channels);
  for (int i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "synth_%03d.png", i);
    save_image(imgs[i], dir / name);
  }
}

ImageBuffer center_crop_resize(const ImageBuffer& img, int side) {
  if (side < 1) throw Error("center_crop_resize: side must be positive");
  const int s = std::min(img.height(), img.width());
  const ImageBuffer sq = crop(img, {(img.height() - s) / 2, (img.width() - s) / 2, s});
  if (s == side) return sq;
  ImageBuffer out(side, side, img.channels());
  const double scale = static_cast<double>(s) / side;
  for (int y = 0; y < side; ++y) {
    const double fy = std::clamp((y + 0.5) * scale - 0.5, 0.0, s - 1.0);
    const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, s - 1);
    const double wy = fy - y0;
    for (int x = 0; x < side; ++x) {
      const double fx = std::clamp((x + 0.5) * scale - 0.5, 0.0, s - 1.0);
      const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, s - 1);
      const double wx = fx - x0;
      for (int c = 0; c < img.channels(); ++c)
        out.at(c, y, x) = (1 - wy) * ((1 - wx) * sq.at(c, y0, x0) + wx * sq.at(c, y0, x1)) +
                          wy * ((1 - wx) * sq.at(c, y1, x0) + wx * sq.at(c, y1, x1));
    }
  }
  return out;
}

ImageBuffer Corpus::load(std::size_t i) const {
  const ImageBuffer img = load_image(files_.at(i));
  return side_ > 0 ? center_crop_resize(img, side_) : img;
}

Corpus ingest_corpus(const std::filesystem::path& dir, int side) {
  if (!std::filesystem::is_directory(dir)) throw Error("corpus directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && is_supported_image(e.path())) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error("no readable images in " + dir.string());
  return Corpus(std::move(files), side);
}

// ---------------------------------------------------------------- attacks

DenoiserParams sampling_params(const Checkpoint& ckpt, bool use_ema) {
  return use_ema && ckpt.ema ? ema_params(*ckpt.ema, ckpt.params) : ckpt.params;
}

ImageBuffer fmdiff_attack(const ImageBuffer& img, const DenoiserParams& params, const FmdiffSpec& spec,
                          SeededRng& rng) {
  if (img.channels() != params.arch.channels)
    throw Error("fmdiff: checkpoint expects " + std::to_string(params.arch.channels) + "-channel images");
  const NoiseSchedule sched = linear_schedule(spec.t_max);
  const int patch = std::min({spec.patch, img.height(), img.width()});
  const PatchGrid grid = build_grid(img.height(), img.width(), patch, spec.stride > 0 ? spec.stride : std::max(1, patch / 2));
  const TimestepGrid ts = timestep_grid(spec.steps, spec.t_max);
  const NoiseEstimator den = [&params](const ImageBuffer& x, const ImageBuffer& c, int t) {
    return forward(params, x, c, t);
  };
  SampleOptions opt;
  opt.clip_x0 = spec.clip_x0;
  Guidance g;
  if (spec.fwm_inference) {
    g.mask = make_freq_mask(img.height(), img.width(), spec.beta);
    g.perturbation = {spec.l_min, spec.l_max, spec.t_max};
    opt.guidance = &g;
  }
  return sample(img, den, sched, grid, ts, rng, opt);
}

std::string BenchAttack::tag() const { return fmdiff ? "fmdiff" : to_string(classical.method); }

double BenchAttack::param() const { return fmdiff ? fmdiff->steps : classical.param; }

BenchAttack parse_bench_attack(const std::string& text, const FmdiffSpec& fmdiff_defaults) {
  const auto colon = text.find(':');
  const std::string name = text.substr(0, colon);
  const std::string arg = colon == std::string::npos ? "" : text.substr(colon + 1);
  BenchAttack a;
  if (name == "fmdiff") {
    a.fmdiff = fmdiff_defaults;
    if (!arg.empty()) a.fmdiff->steps = std::stoi(arg);
    if (a.fmdiff->steps < 1) throw Error("fmdiff: steps must be positive");
    return a;
  }
  a.classical.method = parse_attack_method(name);
  if (a.classical.method != AttackMethod::identity) {
    if (arg.empty()) throw Error("attack '" + name + "' needs a parameter, e.g. " + name + ":<value>");
    try {
      a.classical.param = std::stod(arg);
    } catch (const std::exception&) {
      throw Error("attack parameter '" + arg + "' is not a number");
    }
  }
  a.classical.validate();
  return a;
}

SeededRng image_stream(std::uint64_t seed, std::size_t index) { return SeededRng(seed).derive(index); }

WatermarkBits default_watermark(std::uint64_t seed) {
  SeededRng rng = SeededRng(seed).derive(0x574D424954ULL);
  return WatermarkBits::random(rng);
}

// ---------------------------------------------------------------- bench

void BenchSpec::validate() const {
  if (synth <= 0 && !std::filesystem::is_directory(corpus_dir))
    throw Error("bench: corpus directory not found: " + corpus_dir.string());
  if (codecs.empty()) throw Error("bench: at least one codec required");
  if (attacks.empty()) throw Error("bench: at least one attack required");
  if (watermark && !std::filesystem::exists(*watermark))
    throw Error("bench: watermark file not found: " + watermark->string());
  for (const auto& a : attacks)
    if (a.fmdiff && !std::filesystem::exists(a.fmdiff->checkpoint))
      throw Error("bench: checkpoint not found: " + a.fmdiff->checkpoint.string());
}

std::string format_cell(double psnr, double ber) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f/%.4f", psnr, ber);
  return buf;
}

std::string ReportRow::cell() const { return format_cell(psnr_mean, ber_mean); }

std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double m = 0.0;
  for (double x : xs) m += x;
  m /= static_cast<double>(xs.size());
  double v = 0.0;
  for (double x : xs) v += (x - m) * (x - m);
  return {m, std::sqrt(v / static_cast<double>(xs.size()))};
}

std::vector<ReportRow> run_bench(const BenchSpec& spec) {
  spec.validate();
  std::vector<ImageBuffer> images;
  if (spec.synth > 0) {
    images = synth_corpus(spec.synth, spec.synth_side, spec.seed);
    if (spec.side > 0)
      for (auto& img : images) img = quantize8(center_crop_resize(img, spec.side));
  } else {
    const Corpus corpus = ingest_corpus(spec.corpus_dir, spec.side);
    for (std::size_t i = 0; i < corpus.size(); ++i) images.push_back(quantize8(corpus.load(i)));
  }
  const WatermarkBits wm = spec.watermark ? load_watermark(*spec.watermark) : default_watermark(spec.seed);

  std::vector<std::optional<DenoiserParams>> nets(spec.attacks.size());
  for (std::size_t a = 0; a < spec.attacks.size(); ++a)
    if (spec.attacks[a].fmdiff)
      nets[a] = sampling_params(load_checkpoint(spec.attacks[a].fmdiff->checkpoint), spec.attacks[a].fmdiff->use_ema);

  std::vector<ReportRow> rows;
  for (CodecScheme scheme : spec.codecs) {
    CodecConfig cc;
    cc.scheme = scheme;
    cc.key = spec.seed;
    std::vector<ImageBuffer> marked;
    for (const auto& img : images) marked.push_back(quantize8(embed(img, wm, cc)));
    for (std::size_t a = 0; a < spec.attacks.size(); ++a) {
      const BenchAttack& atk = spec.attacks[a];
      std::vector<double> ps, bs;
      for (std::size_t i = 0; i < images.size(); ++i) {
        SeededRng rng = image_stream(spec.seed, i);
        const ImageBuffer attacked = quantize8(atk.fmdiff ? fmdiff_attack(marked[i], *nets[a], *atk.fmdiff, rng)
                                                          : apply_attack(marked[i], atk.classical, rng));
        const ImageBuffer& ref = spec.psnr_ref == PsnrRef::original ? images[i] : marked[i];
        ps.push_back(spec.on_bytes ? psnr_on_bytes(ref, attacked) : psnr(ref, attacked));
        bs.push_back(ber(wm, extract(attacked, cc)));
      }
      ReportRow row;
      row.codec = to_string(scheme);
      row.attack = atk.tag();
      row.param = atk.param();
      row.n = static_cast<int>(images.size());
      std::tie(row.psnr_mean, row.psnr_std) = mean_std(ps);
      std::tie(row.ber_mean, row.ber_std) = mean_std(bs);
      row.seed = spec.seed;
      rows.push_back(row);
    }
  }
  std::stable_sort(rows.begin(), rows.end(), [](const ReportRow& x, const ReportRow& y) {
    return std::tie(x.codec, x.attack, x.param) < std::tie(y.codec, y.attack, y.param);
  });
  if (!spec.out_csv.empty()) write_csv(rows, spec.out_csv);
  return rows;
}

std::string csv_header() { return "codec,attack,param,n,psnr_mean,psnr_std,ber_mean,ber_std,seed"; }

std::string csv_line(const ReportRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%s,%g,%d,%.6f,%.6f,%.6f,%.6f,%llu", r.codec.c_str(), r.attack.c_str(),
                r.param, r.n, r.psnr_mean, r.psnr_std, r.ber_mean, r.ber_std,
                static_cast<unsigned long long>(r.seed));
  return buf;
}

void write_csv(const std::vector<ReportRow>& rows, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write report " + path.string());
  out << csv_header() << '\n';
  for (const auto& r : rows) out << csv_line(r) << '\n';
}

}  // namespace wmlab
