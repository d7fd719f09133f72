#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "oracles.hpp"
#include "wmlab/codecs.hpp"
#include "wmlab/harness.hpp"
#include "wmlab/losses.hpp"
#include "wmlab/training.hpp"

using namespace wmlab;
namespace fs = std::filesystem;

namespace {

ArchDescriptor tiny_arch() {
  ArchDescriptor a;
  a.channels = 1;
  a.levels = 2;
  a.base_width = 4;
  a.temb_dim = 8;
  return a;
}

std::vector<std::pair<ImageBuffer, ImageBuffer>> toy_pairs(int n, int side) {
  std::vector<std::pair<ImageBuffer, ImageBuffer>> out;
  const WatermarkBits wm = default_watermark(1);
  CodecConfig cc;
  cc.key = 1;
  for (const auto& img : synth_corpus(n, side, 5)) out.push_back({img, quantize8(embed(img, wm, cc))});
  return out;
}

TrainConfig tiny_config(int k, int total) {
  TrainConfig cfg;
  cfg.transition_iter = k;
  cfg.total_iters = total;
  cfg.patch_size = 16;
  cfg.patches_per_image = 2;
  cfg.s_train = 3;
  cfg.lr = 1e-3;
  cfg.seed = 4;
  return cfg;
}

}  // namespace

TEST_CASE("l1 loss") {
  SeededRng rng(1);
  const ImageBuffer a = oracle::random_image(8, 8, 3, rng), b = oracle::random_image(8, 8, 3, rng);
  CHECK(l1_loss(a, a) == 0.0);
  CHECK(l1_loss(ImageBuffer(4, 4, 1, 0.2), ImageBuffer(4, 4, 1, 0.5)) == doctest::Approx(0.3));
  CHECK(l1_loss(a, b) == l1_loss(b, a));
  CHECK_THROWS_AS(l1_loss(a, ImageBuffer(8, 8, 1)), Error);
}

TEST_CASE("ms-ssim loss") {
  SeededRng rng(2);
  const ImageBuffer a = oracle::random_image(176, 176, 1, rng), b = oracle::random_image(176, 176, 1, rng);
  CHECK(std::abs(ms_ssim_loss(a, a)) < 1e-12);
  CHECK(ms_ssim_loss(a, b) == doctest::Approx(ms_ssim_loss(b, a)).epsilon(1e-12));

  const MsSsimOptions opt;
  const double c1 = opt.c1;
  const double expect = 1.0 - std::pow(c1 / (1.0 + c1), 5);
  CHECK(ms_ssim_loss(ImageBuffer(176, 176, 1, 0.0), ImageBuffer(176, 176, 1, 1.0)) == doctest::Approx(expect).epsilon(1e-12));

  CHECK_THROWS_AS(ms_ssim_loss(ImageBuffer(64, 64, 1), ImageBuffer(64, 64, 1)), Error);
  CHECK(fitting_scales(64) == 3);
  CHECK(fitting_scales(176) == 5);
  CHECK(fitting_scales(32) == 2);

  MsSsimOptions small;
  small.scales = 2;
  small.window = 3;
  for (int k = 0; k < 1000; ++k) {
    const ImageBuffer x = oracle::random_image(8, 8, 1, rng), y = oracle::random_image(8, 8, 1, rng);
    const double l = ms_ssim_loss(x, y, small);
    CHECK(l >= 0.0);
    CHECK(l <= 2.0);
  }
}

TEST_CASE("refinement loss is the sum of its parts and vanishes at the target") {
  SeededRng rng(3);
  const ImageBuffer a = oracle::random_image(32, 32, 1, rng), b = oracle::random_image(32, 32, 1, rng);
  MsSsimOptions opt;
  opt.scales = fitting_scales(32);
  Tape tape;
  const RefinementTerms r = refinement_loss(tape, tape.constant(to_tensor(a)), tape.constant(to_tensor(b)), opt);
  const double total = tape.value(r.total).data[0];
  CHECK(std::abs(total - (l1_loss(a, b) + ms_ssim_loss(a, b, opt))) <= 1e-12);
  CHECK(std::abs(total - tape.value(r.l1).data[0] - tape.value(r.msssim).data[0]) <= 1e-12);

  Tape t2;
  const Var x = t2.leaf(to_tensor(b));
  const RefinementTerms z = refinement_loss(t2, x, t2.constant(to_tensor(b)), opt);
  CHECK(std::abs(t2.value(z.total).data[0]) < 1e-12);
  t2.backward_scalar(z.total);
  for (double g : t2.grad(x).data) CHECK(std::abs(g) < 1e-9);
}

TEST_CASE("noise loss of a zero network is the noise energy") {
  ArchDescriptor arch = tiny_arch();
  arch.zero_output = true;
  SeededRng rng(4);
  const TrainState st = make_train_state(init_params(arch, rng), tiny_config(1, 1));
  PatchBatch batch;
  std::vector<int> ts;
  std::vector<ImageBuffer> eps;
  for (int i = 0; i < 16; ++i) {
    batch.original.push_back(oracle::random_image(16, 16, 1, rng));
    batch.watermarked.push_back(batch.original.back());
    ts.push_back(static_cast<int>(rng.uniform_int(1, 1000)));
    eps.push_back(normal_image(16, 16, 1, rng));
  }
  Tape tape;
  const ParamVars pv = bind_params(tape, st.params);
  const double loss = tape.value(noise_loss(tape, st, pv, batch, ts, eps, linear_schedule(1000))).data[0];
  CHECK(loss == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("stage 1 smoke run lowers the moving average loss") {
  const auto pairs = toy_pairs(8, 32);
  TrainConfig cfg = tiny_config(200, 200);
  SeededRng rng(5);
  ArchDescriptor arch = tiny_arch();
  const TrainResult res = train(pairs, cfg, init_params(arch, rng), linear_schedule(1000));
  std::vector<double> losses;
  for (const auto& r : res.log) {
    CHECK(r.stage == 1);
    CHECK(r.loss >= 0.0);
    losses.push_back(r.loss);
  }
  const auto ma = moving_average(losses, 50);
  CHECK(ma.back() < ma.front());
}

TEST_CASE("stage 2 records only the final window") {
  const auto pairs = toy_pairs(1, 16);
  SeededRng rng(6);
  const ArchDescriptor arch = tiny_arch();
  const DenoiserParams params = init_params(arch, rng);
  TrainConfig cfg = tiny_config(0, 1);
  cfg.s_train = 4;
  cfg.window = 1;
  Tape tape;
  const ParamVars pv = bind_params(tape, params);
  std::vector<std::size_t> recorded;
  const RefinementTerms r = stage2_rollout(tape, pv, params, pairs[0].first, pairs[0].second, linear_schedule(1000), cfg, rng, &recorded);
  CHECK(recorded == std::vector<std::size_t>{3});
  CHECK(tape.value(r.total).data[0] >= 0.0);
  tape.backward_scalar(r.total);
  const ParamGrads g = collect_grads(tape, pv);
  double norm = 0.0;
  for (const auto& t : g.tensors)
    for (double v : t.data) norm += v * v;
  CHECK(norm > 0.0);

  cfg.window = 2;
  Tape t2;
  const ParamVars pv2 = bind_params(t2, params);
  recorded.clear();
  stage2_rollout(t2, pv2, params, pairs[0].first, pairs[0].second, linear_schedule(1000), cfg, rng, &recorded);
  CHECK(recorded == std::vector<std::size_t>{2, 3});
}

TEST_CASE("stage dispatch and determinism") {
  CHECK(stage_for(1, 0) == 2);
  CHECK(stage_for(5, 5) == 1);
  CHECK(stage_for(6, 5) == 2);

  const auto pairs = toy_pairs(2, 16);
  const ArchDescriptor arch = tiny_arch();
  auto run = [&](int k, int total, const fs::path& log) {
    SeededRng rng(7);
    TrainConfig cfg = tiny_config(k, total);
    cfg.log_path = log;
    return train(pairs, cfg, init_params(arch, rng), linear_schedule(1000));
  };
  const fs::path dir = fs::temp_directory_path() / "wmlab_unit" / "train";
  fs::create_directories(dir);

  for (const auto& r : run(3, 3, dir / "a.csv").log) CHECK(r.stage == 1);
  for (const auto& r : run(0, 2, dir / "b.csv").log) {
    CHECK(r.stage == 2);
    REQUIRE(r.l1);
    CHECK(std::abs(r.loss - *r.l1 - *r.msssim) < 1e-12);
  }
  run(2, 4, dir / "c.csv");
  run(2, 4, dir / "d.csv");
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  const std::string c = slurp(dir / "c.csv");
  CHECK(c == slurp(dir / "d.csv"));
  CHECK(c.rfind("iter,stage,loss,l1,msssim\n1,1,", 0) == 0);
  CHECK(c.find("\n3,2,") != std::string::npos);

  TrainConfig bad = tiny_config(5, 4);
  SeededRng rng(1);
  CHECK_THROWS_AS(train(pairs, bad, init_params(arch, rng), linear_schedule(1000)), Error);
  CHECK_THROWS_AS(train({}, tiny_config(1, 1), init_params(arch, rng), linear_schedule(1000)), Error);
}

TEST_CASE("moving average windows") {
  CHECK(moving_average({1, 2, 3, 4}, 2) == std::vector<double>{1.5, 2.5, 3.5});
  CHECK(moving_average({1, 2}, 3).empty());
}
