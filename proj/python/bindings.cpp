#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "wmlab/attacks.hpp"
#include "wmlab/codecs.hpp"
#include "wmlab/harness.hpp"
#include "wmlab/image_io.hpp"
#include "wmlab/metrics.hpp"
#include "wmlab/spectral.hpp"

namespace py = pybind11;
using namespace wmlab;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

// (H, W) or (H, W, C) arrays <-> channel-planar buffers.
ImageBuffer to_image(const Array& a) {
  if (a.ndim() != 2 && a.ndim() != 3) throw py::value_error("expected an (H, W) or (H, W, C) array");
  const int h = static_cast<int>(a.shape(0)), w = static_cast<int>(a.shape(1));
  const int c = a.ndim() == 3 ? static_cast<int>(a.shape(2)) : 1;
  ImageBuffer img(h, w, c);
  const double* p = a.data();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < c; ++k) img.at(k, y, x) = p[(static_cast<std::size_t>(y) * w + x) * c + k];
  return img;
}

Array to_array(const ImageBuffer& img) {
  const int h = img.height(), w = img.width(), c = img.channels();
  Array out = c == 1 ? Array({h, w}) : Array({h, w, c});
  double* p = out.mutable_data();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < c; ++k) p[(static_cast<std::size_t>(y) * w + x) * c + k] = img.at(k, y, x);
  return out;
}

WatermarkBits to_bits(const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& a) {
  if (a.size() != WatermarkBits::kCount) throw py::value_error("watermark needs 256 bits");
  WatermarkBits wm;
  std::copy(a.data(), a.data() + a.size(), wm.bits.begin());
  wm.validate();
  return wm;
}

py::array_t<std::uint8_t> from_bits(const WatermarkBits& wm) {
  py::array_t<std::uint8_t> out({WatermarkBits::kSide, WatermarkBits::kSide});
  std::copy(wm.bits.begin(), wm.bits.end(), out.mutable_data());
  return out;
}

CodecConfig codec(const std::string& scheme, std::uint64_t key) {
  CodecConfig cfg;
  cfg.scheme = parse_codec_scheme(scheme);
  cfg.key = key;
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Watermark removal lab: codecs, attacks, metrics and the patch diffusion attack.";
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);

  m.def("load_image", [](const std::filesystem::path& p) { return to_array(load_image(p)); });
  m.def("save_image", [](const Array& a, const std::filesystem::path& p) { save_image(to_image(a), p); });
  m.def("quantize8", [](const Array& a) { return to_array(quantize8(to_image(a))); });
  m.def("synth_image", [](int side, int channels, std::uint64_t seed) {
    SeededRng rng(seed);
    return to_array(synth_image(side, channels, rng));
  }, py::arg("side"), py::arg("channels") = 1, py::arg("seed") = 0);

  m.def("fwm_fuse", [](const Array& fwd, const Array& rev, double beta) {
    const ImageBuffer f = to_image(fwd);
    const FreqMask mask = beta == 0.0 ? zero_mask(f.height(), f.width()) : make_freq_mask(f.height(), f.width(), beta);
    return to_array(fwm_fuse(f, to_image(rev), mask));
  }, py::arg("forward"), py::arg("reverse"), py::arg("beta"), "beta = 0 selects the empty mask.");
  m.def("freq_mask", [](int h, int w, double beta) {
    const FreqMask mask = make_freq_mask(h, w, beta);
    Array out({h, w});
    std::copy(mask.values.begin(), mask.values.end(), out.mutable_data());
    return out;
  });

  m.def("alpha_bar", [](int t_max) {
    const NoiseSchedule s = linear_schedule(t_max);
    std::vector<double> out;
    for (int t = 0; t <= t_max; ++t) out.push_back(s.alpha_bar(t));
    return out;
  }, py::arg("t_max") = 1000);
  m.def("timestep_grid", [](int s, int t_max) { return timestep_grid(s, t_max).timesteps; }, py::arg("s"),
        py::arg("t_max") = 1000);

  m.def("random_watermark", [](std::uint64_t seed) {
    SeededRng rng(seed);
    return from_bits(WatermarkBits::random(rng));
  });
  m.def("embed", [](const Array& img, const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& wm,
                    const std::string& scheme, std::uint64_t key) {
    return to_array(embed(to_image(img), to_bits(wm), codec(scheme, key)));
  }, py::arg("img"), py::arg("wm"), py::arg("scheme") = "lsb", py::arg("key") = 0);
  m.def("extract", [](const Array& img, const std::string& scheme, std::uint64_t key) {
    return from_bits(extract(to_image(img), codec(scheme, key)));
  }, py::arg("img"), py::arg("scheme") = "lsb", py::arg("key") = 0);

  m.def("attack", [](const Array& img, const std::string& method, double param, std::uint64_t seed) {
    AttackSpec spec{parse_attack_method(method), param, seed};
    SeededRng rng(seed);
    return to_array(apply_attack(to_image(img), spec, rng));
  }, py::arg("img"), py::arg("method"), py::arg("param") = 0.0, py::arg("seed") = 0);
  m.def("jpeg_quant_table", &jpeg_quant_table);

  m.def("fmdiff_attack", [](const Array& img, const std::filesystem::path& ckpt, int steps, int patch, bool use_ema,
                            std::uint64_t seed) {
    FmdiffSpec spec;
    spec.checkpoint = ckpt;
    spec.steps = steps;
    spec.patch = patch;
    spec.use_ema = use_ema;
    const DenoiserParams params = sampling_params(load_checkpoint(ckpt), use_ema);
    SeededRng rng(seed);
    return to_array(fmdiff_attack(to_image(img), params, spec, rng));
  }, py::arg("img"), py::arg("checkpoint"), py::arg("steps") = 10, py::arg("patch") = 64, py::arg("use_ema") = true,
     py::arg("seed") = 0);

  m.def("psnr", [](const Array& a, const Array& b) { return psnr(to_image(a), to_image(b)); });
  m.def("ssim", [](const Array& a, const Array& b) { return ssim(to_image(a), to_image(b)); });
  m.def("ber", [](const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& a,
                  const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& b) {
    return ber(to_bits(a), to_bits(b));
  });

  m.def("gradcheck", [](std::uint64_t seed) {
    std::vector<std::tuple<std::string, double, bool>> out;
    for (const auto& r : run_gradcheck(seed)) out.emplace_back(r.name, r.max_rel_error, r.passed);
    return out;
  }, py::arg("seed") = 3);

  m.def("cli", [](std::vector<std::string> args) {
    args.insert(args.begin(), "wmlab");
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    return cli_dispatch(static_cast<int>(argv.size()), argv.data());
  }, "Runs a wmlab subcommand, e.g. cli(['bench', '--synth', '4', ...]).");
}
