#include <cstdio>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "wmlab/harness.hpp"
#include "wmlab/image_io.hpp"
#include "wmlab/metrics.hpp"

namespace wmlab {

namespace {

namespace fs = std::filesystem;

/// Inputs in lexicographic order; a single file counts as a one-image directory.
std::vector<fs::path> input_images(const fs::path& in) {
  if (fs::is_regular_file(in)) return {in};
  const Corpus c = ingest_corpus(in);
  std::vector<fs::path> v;
  for (std::size_t i = 0; i < c.size(); ++i) v.push_back(c.path(i));
  return v;
}

fs::path output_for(const fs::path& src, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  return out_dir / src.filename();
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

/// Settings shared by subcommands: a config file plus flag overrides.
struct Common {
  std::string config_path;
  Config cfg;

  void load() {
    if (!config_path.empty()) cfg = Config::load(config_path);
  }
};

void set_if(Config& cfg, const CLI::Option* opt, const std::string& key, const std::string& value) {
  if (opt->count() > 0) cfg.set(key, value);
}

struct FmdiffFlags {
  std::string ckpt, fwm_inference;
  int steps = 0, patch = 0, stride = 0;
  double beta = 0, l_min = 0, l_max = 0;
  bool raw = false;
  std::vector<std::pair<CLI::Option*, std::string>> opts;

  void add(CLI::App* app) {
    opts.push_back({app->add_option("--ckpt", ckpt, "Denoiser checkpoint"), "fwm.ckpt"});
    opts.push_back({app->add_option("--steps", steps, "Sampling steps S"), "fwm.steps"});
    opts.push_back({app->add_option("--patch", patch, "Patch size"), "fwm.patch"});
    opts.push_back({app->add_option("--stride", stride, "Patch stride (default patch/2)"), "fwm.stride"});
    opts.push_back({app->add_option("--fwm-inference", fwm_inference, "on|off: frequency guidance while sampling"),
                    "fwm.inference"});
    opts.push_back({app->add_option("--beta", beta, "Mask scale"), "fwm.beta"});
    opts.push_back({app->add_option("--l-min", l_min, "Minimum perturbation"), "fwm.l_min"});
    opts.push_back({app->add_option("--l-max", l_max, "Maximum perturbation"), "fwm.l_max"});
    opts.push_back({app->add_flag("--raw-weights", raw, "Sample with raw weights instead of the EMA shadow"), ""});
  }

  FmdiffSpec resolve(Config& cfg) const {
    for (const auto& [opt, key] : opts) {
      if (key.empty() || opt->count() == 0) continue;
      std::ostringstream v;
      if (key == "fwm.ckpt") v << ckpt;
      else if (key == "fwm.steps") v << steps;
      else if (key == "fwm.patch") v << patch;
      else if (key == "fwm.stride") v << stride;
      else if (key == "fwm.inference") v << fwm_inference;
      else if (key == "fwm.beta") v.precision(17), v << beta;
      else if (key == "fwm.l_min") v.precision(17), v << l_min;
      else if (key == "fwm.l_max") v.precision(17), v << l_max;
      cfg.set(key, v.str());
    }
    FmdiffSpec s;
    s.checkpoint = cfg.get("fwm.ckpt", std::string());
    s.steps = cfg.get("fwm.steps", s.steps);
    s.patch = cfg.get("fwm.patch", s.patch);
    s.stride = cfg.get("fwm.stride", s.stride);
    s.fwm_inference = cfg.get("fwm.inference", s.fwm_inference);
    s.beta = cfg.get("fwm.beta", s.beta);
    s.l_min = cfg.get("fwm.l_min", s.l_min);
    s.l_max = cfg.get("fwm.l_max", s.l_max);
    s.clip_x0 = cfg.get("fwm.clip_x0", s.clip_x0);
    s.use_ema = raw ? false : cfg.get("fwm.ema", s.use_ema);
    return s;
  }
};

CodecConfig codec_config(const std::string& tag, std::uint64_t key) {
  CodecConfig c;
  c.scheme = parse_codec_scheme(tag);
  c.key = key;
  c.validate();
  return c;
}

int run_embed(const std::string& codec, const std::string& wm_path, const fs::path& in, const fs::path& out,
              std::uint64_t seed) {
  const CodecConfig cc = codec_config(codec, seed);
  const WatermarkBits wm = wm_path.empty() ? default_watermark(seed) : load_watermark(wm_path);
  const auto files = input_images(in);
  for (const auto& f : files) save_image(embed(load_image(f), wm, cc), output_for(f, out));
  std::printf("embedded %zu image(s) with %s\n", files.size(), codec.c_str());
  return 0;
}

int run_extract(const std::string& codec, const std::string& wm_path, const fs::path& in, const std::string& out,
                std::uint64_t seed) {
  const CodecConfig cc = codec_config(codec, seed);
  const auto files = input_images(in);
  std::optional<WatermarkBits> ref;
  if (!wm_path.empty()) ref = load_watermark(wm_path);
  std::vector<double> bers;
  for (const auto& f : files) {
    const WatermarkBits bits = extract(load_image(f), cc);
    if (!out.empty()) {
      fs::create_directories(out);
      save_watermark(bits, fs::path(out) / (f.stem().string() + ".txt"));
    }
    if (ref) {
      bers.push_back(ber(*ref, bits));
      std::printf("%s ber=%.6f\n", f.filename().string().c_str(), bers.back());
    }
  }
  if (ref) std::printf("mean ber=%.6f over %zu image(s)\n", mean_std(bers).first, bers.size());
  return 0;
}

int run_attack(const std::string& method, double param, const FmdiffSpec& fm, const fs::path& in,
               const fs::path& out, std::uint64_t seed) {
  const auto files = input_images(in);
  std::optional<DenoiserParams> net;
  AttackSpec spec;
  if (method == "fmdiff") {
    if (fm.checkpoint.empty()) throw Error("fmdiff needs --ckpt or fwm.ckpt");
    net = sampling_params(load_checkpoint(fm.checkpoint), fm.use_ema);
  } else {
    spec.method = parse_attack_method(method);
    spec.param = param;
    spec.validate();
  }
  for (std::size_t i = 0; i < files.size(); ++i) {
    SeededRng rng = image_stream(seed, i);
    const ImageBuffer img = load_image(files[i]);
    save_image(net ? fmdiff_attack(img, *net, fm, rng) : apply_attack(img, spec, rng), output_for(files[i], out));
  }
  std::printf("attacked %zu image(s) with %s\n", files.size(), method.c_str());
  return 0;
}

}  // namespace

int cli_dispatch(int argc, char** argv) {
  CLI::App app{"Watermark attack laboratory: codecs, classical and diffusion attacks, training, benchmarks"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--config", common.config_path, "key=value config file (train., bench., fwm. keys)");

  // embed
  std::string codec = "lsb", wm_path, in, out;
  std::uint64_t seed = 0;
  auto* embed_cmd = app.add_subcommand("embed", "Embed a 16x16 watermark into every image");
  embed_cmd->add_option("--codec", codec, "lsb | dct | dft");
  embed_cmd->add_option("--wm", wm_path, "Watermark file (text or 16x16 PGM); default derived from --seed");
  embed_cmd->add_option("--in", in, "Input image or directory")->required();
  embed_cmd->add_option("--out", out, "Output directory")->required();
  embed_cmd->add_option("--seed", seed, "Layout key");

  // extract
  auto* extract_cmd = app.add_subcommand("extract", "Extract watermarks blindly");
  extract_cmd->add_option("--codec", codec, "lsb | dct | dft");
  extract_cmd->add_option("--wm", wm_path, "Reference watermark; prints BER when given");
  extract_cmd->add_option("--in", in, "Input image or directory")->required();
  extract_cmd->add_option("--out", out, "Directory for extracted bit files");
  extract_cmd->add_option("--seed", seed, "Layout key used at embedding");

  // attack
  std::string method;
  double param = 0.0;
  FmdiffFlags fm_attack;
  auto* attack_cmd = app.add_subcommand("attack", "Apply a classical or diffusion attack");
  attack_cmd->add_option("--method", method, "identity | gaussian | speckle | saltpepper | meanfilter | jpeg | fmdiff")
      ->required();
  attack_cmd->add_option("--param", param, "Variance, density, window size, or quality");
  attack_cmd->add_option("--in", in, "Input image or directory")->required();
  attack_cmd->add_option("--out", out, "Output directory")->required();
  attack_cmd->add_option("--seed", seed, "Master seed; image i uses stream i");
  fm_attack.add(attack_cmd);

  // sample
  FmdiffFlags fm_sample;
  auto* sample_cmd = app.add_subcommand("sample", "Patch-aggregated sampling conditioned on each input");
  sample_cmd->add_option("--in", in, "Conditioning image or directory")->required();
  sample_cmd->add_option("--out", out, "Output directory")->required();
  sample_cmd->add_option("--seed", seed, "Master seed; image i uses stream i");
  fm_sample.add(sample_cmd);

  // train
  std::string corpus_dir, ckpt_out, log_out, train_codec;
  int synth = 0, side = 0, iters = -1, k_iter = -1;
  auto* train_cmd = app.add_subcommand("train", "Two-stage training of the conditional noise estimator");
  train_cmd->add_option("--corpus", corpus_dir, "Directory of original images");
  train_cmd->add_option("--synth", synth, "Train on N synthetic images instead");
  train_cmd->add_option("--side", side, "Resize corpus images to side x side");
  train_cmd->add_option("--codec", train_codec, "Codec producing the watermarked inputs (default lsb)");
  train_cmd->add_option("--wm", wm_path, "Watermark file");
  auto* o_tseed = train_cmd->add_option("--seed", seed, "Training seed");
  auto* o_ckpt = train_cmd->add_option("--ckpt", ckpt_out, "Output checkpoint");
  auto* o_log = train_cmd->add_option("--log", log_out, "Loss log (iter,stage,loss,l1,msssim)");
  auto* o_iters = train_cmd->add_option("--iters", iters, "Total iterations");
  auto* o_k = train_cmd->add_option("--K", k_iter, "Last stage-1 iteration");

  // bench
  std::string codecs, attacks, out_csv, psnr_ref = "watermarked", write_corpus;
  bool on_bytes = false;
  FmdiffFlags fm_bench;
  auto* bench_cmd = app.add_subcommand("bench", "Embed, attack, extract over a corpus and write a CSV report");
  auto* b_corpus = bench_cmd->add_option("--corpus", corpus_dir, "Directory of original images");
  auto* b_synth = bench_cmd->add_option("--synth", synth, "Use N synthetic gradient+shape images");
  int synth_side = 0;
  auto* b_synth_side = bench_cmd->add_option("--synth-side", synth_side, "Side of synthetic images (default 128)");
  auto* b_side = bench_cmd->add_option("--side", side, "Resize corpus images to side x side");
  auto* b_codecs = bench_cmd->add_option("--codecs", codecs, "Comma list, e.g. lsb,dct,dft");
  auto* b_attacks = bench_cmd->add_option("--attacks", attacks, "Comma list, e.g. identity,gaussian:0.002,jpeg:50,fmdiff:10");
  auto* b_out = bench_cmd->add_option("--out", out_csv, "CSV report path");
  auto* b_seed = bench_cmd->add_option("--seed", seed, "Master seed");
  auto* b_wm = bench_cmd->add_option("--wm", wm_path, "Watermark file");
  bench_cmd->add_option("--psnr-ref", psnr_ref, "watermarked | original")
      ->check(CLI::IsMember({"watermarked", "original"}));
  bench_cmd->add_flag("--on-bytes", on_bytes, "PSNR on 8-bit exports");
  bench_cmd->add_option("--write-corpus", write_corpus, "Also write the synthetic corpus to this directory");
  fm_bench.add(bench_cmd);

  // gradcheck
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference checks of every differentiable primitive");
  grad_cmd->add_option("--seed", seed, "Seed for inputs and sampled coordinates");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    common.load();
    Config& cfg = common.cfg;
    if (*embed_cmd) return run_embed(codec, wm_path, in, out, seed);
    if (*extract_cmd) return run_extract(codec, wm_path, in, out, seed);
    if (*attack_cmd) {
      FmdiffSpec fm = fm_attack.resolve(cfg);
      return run_attack(method, param, fm, in, out, seed);
    }
    if (*sample_cmd) return run_attack("fmdiff", 0.0, fm_sample.resolve(cfg), in, out, seed);

    if (*train_cmd) {
      set_if(cfg, o_tseed, "train.seed", std::to_string(seed));
      set_if(cfg, o_ckpt, "train.checkpoint", ckpt_out);
      set_if(cfg, o_log, "train.log", log_out);
      set_if(cfg, o_iters, "train.total_iters", std::to_string(iters));
      set_if(cfg, o_k, "train.K", std::to_string(k_iter));
      const TrainConfig tc = train_config_from(cfg);
      if (tc.checkpoint_path.empty()) throw Error("train needs --ckpt or train.checkpoint");
      std::vector<ImageBuffer> originals;
      const int n_synth = synth > 0 ? synth : cfg.get("train.synth", 0);
      if (n_synth > 0) {
        originals = synth_corpus(n_synth, side > 0 ? side : cfg.get("train.synth_side", 64), tc.seed);
      } else {
        const std::string dir = corpus_dir.empty() ? cfg.get("train.corpus", std::string()) : corpus_dir;
        if (dir.empty()) throw Error("train needs --corpus or --synth");
        const Corpus c = ingest_corpus(dir, side > 0 ? side : cfg.get("train.side", 0));
        for (std::size_t i = 0; i < c.size(); ++i) originals.push_back(quantize8(c.load(i)));
      }
      ArchDescriptor base;
      base.channels = originals.front().channels();
      const ArchDescriptor arch = arch_from(cfg, base);
      const CodecConfig cc = codec_config(train_codec.empty() ? cfg.get("train.codec", std::string("lsb")) : train_codec,
                                          tc.seed);
      const WatermarkBits wm = wm_path.empty() ? default_watermark(tc.seed) : load_watermark(wm_path);
      std::vector<std::pair<ImageBuffer, ImageBuffer>> pairs;
      for (const auto& img : originals) pairs.push_back({img, quantize8(embed(img, wm, cc))});
      SeededRng init_rng = SeededRng(tc.seed).derive(0x1A17);
      const TrainResult res = train(pairs, tc, init_params(arch, init_rng), linear_schedule(1000),
                                    [&](const LossReport& r) {
                                      if (r.iteration % 100 == 0 || r.iteration == tc.total_iters)
                                        std::fprintf(stderr, "%s\n", r.log_line().c_str());
                                    });
      std::printf("trained %d iterations, %zu parameters -> %s\n", tc.total_iters,
                  res.state.params.scalar_count(), tc.checkpoint_path.string().c_str());
      return 0;
    }

    if (*bench_cmd) {
      set_if(cfg, b_corpus, "bench.corpus", corpus_dir);
      set_if(cfg, b_synth, "bench.synth", std::to_string(synth));
      set_if(cfg, b_synth_side, "bench.synth_side", std::to_string(synth_side));
      set_if(cfg, b_side, "bench.side", std::to_string(side));
      set_if(cfg, b_codecs, "bench.codecs", codecs);
      set_if(cfg, b_attacks, "bench.attacks", attacks);
      set_if(cfg, b_out, "bench.out", out_csv);
      set_if(cfg, b_seed, "bench.seed", std::to_string(seed));
      set_if(cfg, b_wm, "bench.wm", wm_path);
      BenchSpec spec;
      spec.corpus_dir = cfg.get("bench.corpus", std::string());
      spec.synth = cfg.get("bench.synth", 0);
      spec.synth_side = cfg.get("bench.synth_side", spec.synth_side);
      spec.side = cfg.get("bench.side", 0);
      for (const auto& c : split_list(cfg.get("bench.codecs", std::string("lsb,dct,dft"))))
        spec.codecs.push_back(parse_codec_scheme(c));
      const FmdiffSpec fm = fm_bench.resolve(cfg);
      for (const auto& a : split_list(cfg.get("bench.attacks", std::string("identity"))))
        spec.attacks.push_back(parse_bench_attack(a, fm));
      spec.out_csv = cfg.get("bench.out", std::string());
      spec.seed = cfg.get("bench.seed", std::uint64_t{0});
      const std::string wm_file = cfg.get("bench.wm", std::string());
      if (!wm_file.empty()) spec.watermark = wm_file;
      spec.psnr_ref = psnr_ref == "original" ? PsnrRef::original : PsnrRef::watermarked;
      spec.on_bytes = on_bytes;
      if (!write_corpus.empty()) {
        if (spec.synth <= 0) throw Error("--write-corpus requires --synth");
        write_synth_corpus(write_corpus, spec.synth, spec.synth_side, spec.seed);
      }
      const auto rows = run_bench(spec);
      std::printf("%s\n", csv_header().c_str());
      for (const auto& r : rows) std::printf("%s    %s\n", csv_line(r).c_str(), r.cell().c_str());
      return 0;
    }

    if (*grad_cmd) {
      bool ok = true;
      for (const auto& r : run_gradcheck(seed)) {
        std::printf("%-24s checked=%-4d max_rel=%.3e %s\n", r.name.c_str(), r.checked, r.max_rel_error,
                    r.passed ? "ok" : "FAIL");
        ok = ok && r.passed;
      }
      return ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}

}  // namespace wmlab
