#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "oracles.hpp"
#include "wmlab/denoiser.hpp"
#include "wmlab/harness.hpp"

using namespace wmlab;
namespace fs = std::filesystem;

namespace {

ArchDescriptor small_arch(int channels = 3) {
  ArchDescriptor a;
  a.channels = channels;
  a.base_width = 8;
  a.temb_dim = 16;
  return a;
}

Tensor random_tensor(std::vector<int> shape, SeededRng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.uniform() * 2.0 - 1.0;
  return t;
}

}  // namespace

TEST_CASE("tape replay reproduces values and constants have zero gradient") {
  SeededRng rng(1);
  Tape tape;
  const Var x = tape.leaf(random_tensor({1, 2, 4, 4}, rng));
  const Var w = tape.leaf(random_tensor({3, 2, 3, 3}, rng));
  const Var b = tape.leaf(random_tensor({3}, rng));
  const Var y = ops::mean(tape, ops::square(tape, ops::silu(tape, ops::conv2d(tape, x, w, b, 1, 1))));
  const Tensor before = tape.value(y);
  tape.replay();
  CHECK(tape.value(y) == before);

  Tape t2;
  const Var p = t2.leaf(random_tensor({4}, rng));
  const Var c = t2.constant(Tensor({4}, 2.0));
  const Var k = ops::mean(t2, ops::mul(t2, c, ops::scale(t2, p, 0.0)));
  t2.backward_scalar(k);
  for (double g : t2.grad(p).data) CHECK(g == 0.0);
}

TEST_CASE("gradient of a combination is the combination of gradients") {
  SeededRng rng(2);
  const Tensor xv = random_tensor({1, 1, 6, 6}, rng), yv = random_tensor({1, 1, 6, 6}, rng);
  auto grad_of = [&](double a, double b) {
    Tape tape;
    const Var x = tape.leaf(xv);
    const Var y = tape.constant(yv);
    const Var l1 = ops::mean(tape, ops::square(tape, ops::sub(tape, x, y)));
    const Var l2 = ops::mean(tape, ops::silu(tape, ops::mul(tape, x, y)));
    tape.backward_scalar(ops::lincomb(tape, l1, a, l2, b));
    return tape.grad(x);
  };
  const Tensor g1 = grad_of(1, 0), g2 = grad_of(0, 1), g = grad_of(0.7, -2.5);
  for (std::size_t i = 0; i < g.numel(); ++i) CHECK(std::abs(g.data[i] - (0.7 * g1.data[i] - 2.5 * g2.data[i])) <= 1e-10);
}

TEST_CASE("finite difference suite passes") {
  for (const auto& r : run_gradcheck(3)) {
    INFO(r.name << " max rel error " << r.max_rel_error);
    CHECK(r.passed);
    CHECK(r.checked > 0);
  }
}

TEST_CASE("initialization") {
  SeededRng a(1), b(1), c(2);
  const ArchDescriptor arch;
  const DenoiserParams p = init_params(arch, a);
  const DenoiserParams q = init_params(arch, b);
  const DenoiserParams r = init_params(arch, c);
  CHECK(p == q);
  CHECK(p.scalar_count() > 0u);
  CHECK(p.get("in.w").shape == std::vector<int>{16, 6, 3, 3});
  double diff = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const std::string& name = p.names[i];
    const bool is_bias = name.size() > 2 && name.compare(name.size() - 2, 2, ".b") == 0;
    if (is_bias)
      for (double v : p.tensors[i].data) CHECK(v == 0.0);
    for (std::size_t k = 0; k < p.tensors[i].numel(); ++k)
      diff = std::max(diff, std::abs(p.tensors[i].data[k] - r.tensors[i].data[k]));
  }
  CHECK(diff > 0.0);

  ArchDescriptor bad;
  bad.groups = 5;
  SeededRng d(1);
  CHECK_THROWS_AS(init_params(bad, d), Error);
}

TEST_CASE("forward contract") {
  SeededRng rng(4);
  const DenoiserParams p = init_params(ArchDescriptor{}, rng);
  const ImageBuffer x = oracle::random_image(64, 64, 3, rng, -1, 1), c = oracle::random_image(64, 64, 3, rng);
  const ImageBuffer y = forward(p, x, c, 500);
  CHECK(y.same_shape(x));
  CHECK(forward(p, x, c, 500) == y);
  CHECK(forward(p, x, c, 10) != y);
  CHECK_THROWS_AS(forward(p, x, ImageBuffer(64, 64, 1), 3), Error);
  CHECK_THROWS_AS(forward(p, ImageBuffer(30, 30, 3), ImageBuffer(30, 30, 3), 3), Error);

  ArchDescriptor z;
  z.zero_output = true;
  const DenoiserParams pz = init_params(z, rng);
  const ImageBuffer out = forward(pz, x, c, 3);
  for (double v : out.data()) CHECK(v == 0.0);
}

TEST_CASE("batched forward equals per-sample forward") {
  SeededRng rng(5);
  const ArchDescriptor arch = small_arch(1);
  const DenoiserParams p = init_params(arch, rng);
  const ImageBuffer x1 = oracle::random_image(16, 16, 1, rng), x2 = oracle::random_image(16, 16, 1, rng);
  const ImageBuffer c1 = oracle::random_image(16, 16, 1, rng), c2 = oracle::random_image(16, 16, 1, rng);
  Tape tape;
  const ParamVars pv = bind_params(tape, p, false);
  const Var out = forward(tape, arch, pv, tape.constant(stack_images({x1, x2})), tape.constant(stack_images({c1, c2})), {20, 900});
  CHECK(max_abs_diff(to_image(tape.value(out), 0), forward(p, x1, c1, 20)) < 1e-12);
  CHECK(max_abs_diff(to_image(tape.value(out), 1), forward(p, x2, c2, 900)) < 1e-12);
}

TEST_CASE("time embedding") {
  const Tensor e = time_embedding({0, 7}, 8);
  CHECK(e.shape == std::vector<int>{2, 8});
  for (int i = 0; i < 4; ++i) {
    CHECK(e.data[i] == 0.0);
    CHECK(e.data[4 + i] == 1.0);
    const double f = std::exp(-std::log(10000.0) * i / 4.0);
    CHECK(e.data[8 + i] == doctest::Approx(std::sin(7 * f)));
    CHECK(e.data[12 + i] == doctest::Approx(std::cos(7 * f)));
  }
}

TEST_CASE("adam") {
  DenoiserParams p;
  p.names = {"x"};
  p.tensors = {Tensor({1}, 0.0)};
  AdamState st = make_adam(p, 0.1);
  adam_step(p, ParamGrads{{Tensor({1}, 1.0)}}, st);
  CHECK(p.tensors[0].data[0] == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(st.step == 1);
  const double after = p.tensors[0].data[0];

  DenoiserParams q;
  q.names = {"y"};
  q.tensors = {Tensor({3}, 0.5)};
  AdamState sq = make_adam(q, 0.1);
  adam_step(q, ParamGrads{{Tensor({3}, 0.0)}}, sq);
  for (double v : q.tensors[0].data) CHECK(v == 0.5);
  CHECK(sq.step == 1);
  adam_step(q, ParamGrads{{Tensor({3}, 0.0)}}, sq);
  CHECK(sq.step == 2);
  CHECK(after < 0.0);
  CHECK_THROWS_AS(adam_step(q, ParamGrads{{Tensor({2}, 0.0)}}, sq), Error);
}

TEST_CASE("ema") {
  DenoiserParams p;
  p.names = {"x"};
  p.tensors = {Tensor({2}, 2.0)};
  EmaState e = make_ema(p, 0.5);
  e.shadow[0] = Tensor({2}, 0.0);
  ema_update(e, p);
  CHECK(e.shadow[0].data[0] == 1.0);

  EmaState zero = make_ema(p, 0.0);
  zero.shadow[0] = Tensor({2}, -3.0);
  ema_update(zero, p);
  CHECK(zero.shadow[0] == p.tensors[0]);

  EmaState one = make_ema(p, 1.0);
  one.shadow[0] = Tensor({2}, -3.0);
  ema_update(one, p);
  CHECK(one.shadow[0] == Tensor({2}, -3.0));

  CHECK(ema_params(e, p).tensors[0] == e.shadow[0]);
}

TEST_CASE("checkpoint roundtrip and corruption") {
  SeededRng rng(6);
  const ArchDescriptor arch = small_arch(1);
  DenoiserParams p = init_params(arch, rng);
  AdamState adam = make_adam(p, 1e-3);
  EmaState ema = make_ema(p, 0.99);
  Tape tape;
  const ParamVars pv = bind_params(tape, p);
  const Var out = forward(tape, arch, pv, tape.constant(random_tensor({1, 1, 8, 8}, rng)),
                          tape.constant(random_tensor({1, 1, 8, 8}, rng)), {100});
  adam_step(p, backward(tape, pv, out, random_tensor({1, 1, 8, 8}, rng)), adam);
  ema_update(ema, p);

  const fs::path dir = fs::temp_directory_path() / "wmlab_unit" / "ckpt";
  fs::create_directories(dir);
  save_checkpoint({p, ema, adam}, dir / "a.fmdw");
  const Checkpoint back = load_checkpoint(dir / "a.fmdw");
  CHECK(back.params == p);
  REQUIRE(back.ema);
  CHECK(back.ema->shadow == ema.shadow);
  CHECK(back.ema->decay == ema.decay);
  REQUIRE(back.adam);
  CHECK(back.adam->step == 1);
  CHECK(back.adam->m == adam.m);
  CHECK(back.adam->v == adam.v);
  CHECK(back.adam->lr == adam.lr);

  const ImageBuffer x = oracle::random_image(16, 16, 1, rng), c = oracle::random_image(16, 16, 1, rng);
  CHECK(forward(back.params, x, c, 42) == forward(p, x, c, 42));
  CHECK(forward(ema_params(*back.ema, back.params), x, c, 42) != forward(p, x, c, 42));

  std::vector<char> bytes;
  {
    std::ifstream in(dir / "a.fmdw", std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto write = [&](const fs::path& path, std::vector<char> b) {
    std::ofstream out(path, std::ios::binary);
    out.write(b.data(), static_cast<std::streamsize>(b.size()));
  };
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  write(dir / "magic.fmdw", bad_magic);
  CHECK_THROWS_AS(load_checkpoint(dir / "magic.fmdw"), FormatError);

  auto bad_version = bytes;
  bad_version[4] = 7;
  write(dir / "version.fmdw", bad_version);
  CHECK_THROWS_AS(load_checkpoint(dir / "version.fmdw"), VersionError);

  write(dir / "short.fmdw", std::vector<char>(bytes.begin(), bytes.begin() + bytes.size() / 2));
  CHECK_THROWS_AS(load_checkpoint(dir / "short.fmdw"), FormatError);

  CHECK_THROWS_AS(load_checkpoint(dir / "missing.fmdw"), Error);
}

TEST_CASE("checkpoint with mismatched shapes is rejected") {
  SeededRng rng(7);
  DenoiserParams p = init_params(small_arch(1), rng);
  p.get("in.w") = Tensor({8, 2, 1, 1});
  const fs::path path = fs::temp_directory_path() / "wmlab_unit" / "ckpt" / "shape.fmdw";
  save_checkpoint({p, std::nullopt, std::nullopt}, path);
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);
}
