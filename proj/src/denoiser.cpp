#include "wmlab/denoiser.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_map>

namespace wmlab {

void ArchDescriptor::validate() const {
  if (channels != 1 && channels != 3) throw Error("arch: channels must be 1 or 3");
  if (levels < 1 || levels > 6) throw Error("arch: levels must be in [1, 6]");
  if (kernel < 1 || kernel % 2 == 0) throw Error("arch: kernel must be odd");
  if (groups < 1 || base_width < 1 || base_width % groups != 0)
    throw Error("arch: base width must be a positive multiple of the group count");
  if (temb_dim < 2 || temb_dim % 2 != 0) throw Error("arch: time embedding size must be even");
}

namespace {

enum class Init { kaiming, zero, one };

struct Slot {
  std::string name;
  std::vector<int> shape;
  Init init;
  int fan_in;
};

void conv_slots(std::vector<Slot>& s, const std::string& n, int co, int ci, int k, Init w = Init::kaiming) {
  s.push_back({n + ".w", {co, ci, k, k}, w, ci * k * k});
  s.push_back({n + ".b", {co}, Init::zero, 0});
}

void norm_slots(std::vector<Slot>& s, const std::string& n, int c) {
  s.push_back({n + ".g", {c}, Init::one, 0});
  s.push_back({n + ".b", {c}, Init::zero, 0});
}

void block_slots(std::vector<Slot>& s, const std::string& n, int ci, int co, const ArchDescriptor& a) {
  norm_slots(s, n + ".norm1", ci);
  conv_slots(s, n + ".conv1", co, ci, a.kernel);
  s.push_back({n + ".temb.w", {co, a.temb_dim}, Init::kaiming, a.temb_dim});
  s.push_back({n + ".temb.b", {co}, Init::zero, 0});
  norm_slots(s, n + ".norm2", co);
  conv_slots(s, n + ".conv2", co, co, a.kernel);
  if (ci != co) conv_slots(s, n + ".skip", co, ci, 1);
}

std::vector<Slot> layout(const ArchDescriptor& a) {
  a.validate();
  std::vector<Slot> s;
  conv_slots(s, "in", a.width(0), 2 * a.channels, a.kernel);
  for (int l = 0; l < a.levels; ++l) {
    block_slots(s, "enc" + std::to_string(l), l == 0 ? a.width(0) : a.width(l - 1), a.width(l), a);
    if (l + 1 < a.levels) conv_slots(s, "down" + std::to_string(l), a.width(l), a.width(l), 3);
  }
  for (int l = a.levels - 2; l >= 0; --l)
    block_slots(s, "dec" + std::to_string(l), a.width(l + 1) + a.width(l), a.width(l), a);
  norm_slots(s, "out.norm", a.width(0));
  conv_slots(s, "out.conv", a.channels, a.width(0), a.kernel, a.zero_output ? Init::zero : Init::kaiming);
  return s;
}

class Lookup {
 public:
  Lookup(const ArchDescriptor& a, const ParamVars& p) : vars_(p.vars) {
    const auto slots = layout(a);
    if (slots.size() != p.vars.size()) throw Error("forward: parameter count does not match the architecture");
    for (std::size_t i = 0; i < slots.size(); ++i) index_[slots[i].name] = i;
  }
  Var operator()(const std::string& name) const { return vars_[index_.at(name)]; }

 private:
  const std::vector<Var>& vars_;
  std::unordered_map<std::string, std::size_t> index_;
};

Var res_block(Tape& tape, const Lookup& P, const std::string& n, Var x, Var temb, int ci, int co,
              const ArchDescriptor& a) {
  const int pad = a.kernel / 2;
  Var h = ops::group_norm(tape, x, P(n + ".norm1.g"), P(n + ".norm1.b"), a.groups);
  h = ops::silu(tape, h);
  h = ops::conv2d(tape, h, P(n + ".conv1.w"), P(n + ".conv1.b"), 1, pad);
  h = ops::add_channel_bias(tape, h, ops::linear(tape, temb, P(n + ".temb.w"), P(n + ".temb.b")));
  h = ops::group_norm(tape, h, P(n + ".norm2.g"), P(n + ".norm2.b"), a.groups);
  h = ops::silu(tape, h);
  h = ops::conv2d(tape, h, P(n + ".conv2.w"), P(n + ".conv2.b"), 1, pad);
  const Var skip = ci == co ? x : ops::conv2d(tape, x, P(n + ".skip.w"), P(n + ".skip.b"), 1, 0);
  return ops::add(tape, h, skip);
}

}  // namespace

std::size_t DenoiserParams::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.numel();
  return n;
}

std::size_t DenoiserParams::index(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return i;
  throw Error("no parameter named '" + name + "'");
}

void DenoiserParams::check_finite() const {
  for (std::size_t i = 0; i < tensors.size(); ++i)
    for (double v : tensors[i].data)
      if (!std::isfinite(v)) throw Error("parameter '" + names[i] + "' is not finite");
}

DenoiserParams init_params(const ArchDescriptor& arch, SeededRng& rng) {
  DenoiserParams p;
  p.arch = arch;
  for (const auto& s : layout(arch)) {
    Tensor t(s.shape);
    if (s.init == Init::one) {
      for (double& v : t.data) v = 1.0;
    } else if (s.init == Init::kaiming) {
      const double sd = std::sqrt(2.0 / s.fan_in);
      for (double& v : t.data) v = sd * rng.normal();
    }
    p.names.push_back(s.name);
    p.tensors.push_back(std::move(t));
  }
  return p;
}

Tensor time_embedding(const std::vector<int>& t, int dim) {
  const int half = dim / 2;
  Tensor e({static_cast<int>(t.size()), dim});
  for (std::size_t n = 0; n < t.size(); ++n)
    for (int i = 0; i < half; ++i) {
      const double f = std::exp(-std::log(10000.0) * i / half);
      e.data[n * dim + i] = std::sin(t[n] * f);
      e.data[n * dim + half + i] = std::cos(t[n] * f);
    }
  return e;
}

ParamVars bind_params(Tape& tape, const DenoiserParams& params, bool requires_grad) {
  ParamVars p;
  for (const auto& t : params.tensors) p.vars.push_back(tape.leaf(t, requires_grad));
  return p;
}

Var forward(Tape& tape, const ArchDescriptor& a, const ParamVars& p, Var noisy, Var cond,
            const std::vector<int>& t) {
  const Lookup P(a, p);
  const Tensor& xs = tape.value(noisy);
  if (xs.rank() != 4 || xs.dim(1) != a.channels)
    throw Error("forward: expected [N, " + std::to_string(a.channels) + ", H, W], got " +
                shape_string(xs.shape));
  if (!xs.same_shape(tape.value(cond))) throw Error("forward: noisy and cond shapes differ");
  if (xs.dim(2) % a.side_multiple() != 0 || xs.dim(3) % a.side_multiple() != 0)
    throw Error("forward: spatial size must be a multiple of " + std::to_string(a.side_multiple()));
  if (static_cast<int>(t.size()) != xs.dim(0)) throw Error("forward: one timestep per sample required");
  for (int v : t)
    if (v < 0) throw Error("forward: negative timestep");

  const Var temb = tape.constant(time_embedding(t, a.temb_dim));
  const int pad = a.kernel / 2;
  Var h = ops::conv2d(tape, ops::concat_channels(tape, noisy, cond), P("in.w"), P("in.b"), 1, pad);
  std::vector<Var> skips;
  for (int l = 0; l < a.levels; ++l) {
    const int ci = l == 0 ? a.width(0) : a.width(l - 1);
    h = res_block(tape, P, "enc" + std::to_string(l), h, temb, ci, a.width(l), a);
    if (l + 1 < a.levels) {
      skips.push_back(h);
      const std::string d = "down" + std::to_string(l);
      h = ops::conv2d(tape, h, P(d + ".w"), P(d + ".b"), 2, 1);
    }
  }
  for (int l = a.levels - 2; l >= 0; --l) {
    h = ops::concat_channels(tape, ops::upsample_nearest2(tape, h), skips[l]);
    h = res_block(tape, P, "dec" + std::to_string(l), h, temb, a.width(l + 1) + a.width(l), a.width(l), a);
  }
  h = ops::group_norm(tape, h, P("out.norm.g"), P("out.norm.b"), a.groups);
  h = ops::silu(tape, h);
  return ops::conv2d(tape, h, P("out.conv.w"), P("out.conv.b"), 1, pad);
}

ImageBuffer forward(const DenoiserParams& params, const ImageBuffer& noisy, const ImageBuffer& cond,
                    int t) {
  require_same_shape(noisy, cond, "forward");
  Tape tape;
  const ParamVars p = bind_params(tape, params, false);
  const Var out = forward(tape, params.arch, p, tape.constant(to_tensor(noisy)),
                          tape.constant(to_tensor(cond)), {t});
  return to_image(tape.value(out));
}

ParamGrads collect_grads(Tape& tape, const ParamVars& p) {
  ParamGrads g;
  for (Var v : p.vars) g.tensors.push_back(tape.has_grad(v) ? tape.grad(v) : Tensor(tape.value(v).shape));
  return g;
}

ParamGrads backward(Tape& tape, const ParamVars& p, Var out, const Tensor& loss_grad) {
  tape.backward(out, loss_grad);
  return collect_grads(tape, p);
}

AdamState make_adam(const DenoiserParams& params, double lr) {
  AdamState s;
  s.lr = lr;
  for (const auto& t : params.tensors) {
    s.m.emplace_back(t.shape);
    s.v.emplace_back(t.shape);
  }
  return s;
}

void adam_step(DenoiserParams& params, const ParamGrads& grads, AdamState& s) {
  if (grads.tensors.size() != params.size() || s.m.size() != params.size() || s.v.size() != params.size())
    throw Error("adam_step: state does not match the parameter set");
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params.tensors[k];
    const Tensor& g = grads.tensors[k];
    if (!g.same_shape(p) || !s.m[k].same_shape(p) || !s.v[k].same_shape(p))
      throw Error("adam_step: shape mismatch at '" + params.names[k] + "'");
    for (std::size_t i = 0; i < p.numel(); ++i) {
      double& m = s.m[k].data[i];
      double& v = s.v[k].data[i];
      m = s.beta1 * m + (1.0 - s.beta1) * g.data[i];
      v = s.beta2 * v + (1.0 - s.beta2) * g.data[i] * g.data[i];
      p.data[i] -= s.lr * (m / c1) / (std::sqrt(v / c2) + s.eps);
    }
  }
}

EmaState make_ema(const DenoiserParams& params, double decay) {
  if (decay < 0.0 || decay > 1.0) throw Error("ema: decay must be in [0, 1]");
  return {decay, params.tensors};
}

void ema_update(EmaState& ema, const DenoiserParams& params) {
  if (ema.shadow.size() != params.size()) throw Error("ema_update: parameter count mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& s = ema.shadow[k];
    const Tensor& p = params.tensors[k];
    if (!s.same_shape(p)) throw Error("ema_update: shape mismatch at '" + params.names[k] + "'");
    for (std::size_t i = 0; i < p.numel(); ++i) s.data[i] = ema.decay * s.data[i] + (1.0 - ema.decay) * p.data[i];
  }
}

DenoiserParams ema_params(const EmaState& ema, const DenoiserParams& params) {
  if (ema.shadow.size() != params.size()) throw Error("ema_params: parameter count mismatch");
  DenoiserParams out = params;
  out.tensors = ema.shadow;
  return out;
}

// ---------------------------------------------------------------- checkpoint

namespace {

constexpr char kMagic[4] = {'F', 'M', 'D', 'W'};

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ostream& os, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

void put_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
  put_u32(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (int d : t.shape) put_u32(os, static_cast<std::uint32_t>(d));
  for (double v : t.data) put_f64(os, v);
}

class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}

  void bytes(char* out, std::size_t n) {
    is_.read(out, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) throw FormatError("checkpoint: truncated file");
  }
  std::uint32_t u32() {
    unsigned char b[4];
    bytes(reinterpret_cast<char*>(b), 4);
    return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }
  double f64() {
    unsigned char b[8];
    bytes(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    double d;
    std::memcpy(&d, &v, 8);
    return d;
  }

 private:
  std::istream& is_;
};

Tensor arch_tensor(const ArchDescriptor& a) {
  return Tensor({7}, {double(a.channels), double(a.levels), double(a.base_width), double(a.kernel),
                      double(a.groups), double(a.temb_dim), a.zero_output ? 1.0 : 0.0});
}

ArchDescriptor arch_from(const Tensor& t) {
  if (t.numel() != 7) throw FormatError("checkpoint: malformed arch record");
  ArchDescriptor a;
  a.channels = static_cast<int>(t.data[0]);
  a.levels = static_cast<int>(t.data[1]);
  a.base_width = static_cast<int>(t.data[2]);
  a.kernel = static_cast<int>(t.data[3]);
  a.groups = static_cast<int>(t.data[4]);
  a.temb_dim = static_cast<int>(t.data[5]);
  a.zero_output = t.data[6] != 0.0;
  a.validate();
  return a;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const DenoiserParams& p = ckpt.params;
  std::vector<std::pair<std::string, const Tensor*>> entries;
  const Tensor arch = arch_tensor(p.arch);
  entries.push_back({"arch", &arch});
  for (std::size_t i = 0; i < p.size(); ++i) entries.push_back({p.names[i], &p.tensors[i]});
  Tensor decay, step, hyper;
  if (ckpt.ema) {
    decay = Tensor::scalar(ckpt.ema->decay);
    entries.push_back({"ema.decay", &decay});
    for (std::size_t i = 0; i < p.size(); ++i) entries.push_back({"ema/" + p.names[i], &ckpt.ema->shadow.at(i)});
  }
  if (ckpt.adam) {
    const AdamState& a = *ckpt.adam;
    step = Tensor::scalar(static_cast<double>(a.step));
    hyper = Tensor({4}, {a.lr, a.beta1, a.beta2, a.eps});
    entries.push_back({"adam.step", &step});
    entries.push_back({"adam.hyper", &hyper});
    for (std::size_t i = 0; i < p.size(); ++i) entries.push_back({"adam.m/" + p.names[i], &a.m.at(i)});
    for (std::size_t i = 0; i < p.size(); ++i) entries.push_back({"adam.v/" + p.names[i], &a.v.at(i)});
  }

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write checkpoint " + path.string());
  os.write(kMagic, 4);
  put_u32(os, kCheckpointVersion);
  put_u32(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) put_tensor(os, name, *t);
  if (!os) throw Error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read checkpoint " + path.string());
  Reader rd(is);
  char magic[4];
  rd.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("checkpoint: bad magic in " + path.string());
  const std::uint32_t version = rd.u32();
  if (version != kCheckpointVersion)
    throw VersionError("checkpoint: version " + std::to_string(version) + ", expected " +
                       std::to_string(kCheckpointVersion));
  const std::uint32_t count = rd.u32();
  std::unordered_map<std::string, Tensor> all;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint32_t len = rd.u32();
    if (len > 4096) throw FormatError("checkpoint: implausible name length");
    std::string name(len, '\0');
    rd.bytes(name.data(), len);
    const std::uint32_t rank = rd.u32();
    if (rank > 8) throw FormatError("checkpoint: implausible rank");
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(rd.u32());
    Tensor t(shape);
    for (double& v : t.data) v = rd.f64();
    all[name] = std::move(t);
  }
  auto take = [&](const std::string& name) -> Tensor& {
    auto it = all.find(name);
    if (it == all.end()) throw FormatError("checkpoint: missing tensor '" + name + "'");
    return it->second;
  };

  Checkpoint ck;
  ck.params.arch = arch_from(take("arch"));
  for (const auto& s : layout(ck.params.arch)) {
    Tensor& t = take(s.name);
    if (t.shape != s.shape)
      throw FormatError("checkpoint: tensor '" + s.name + "' has shape " + shape_string(t.shape) +
                        ", architecture expects " + shape_string(s.shape));
    ck.params.names.push_back(s.name);
    ck.params.tensors.push_back(t);
  }
  const auto& names = ck.params.names;
  auto like = [&](const std::string& prefix, std::size_t i) {
    Tensor& t = take(prefix + names[i]);
    if (!t.same_shape(ck.params.tensors[i])) throw FormatError("checkpoint: shape mismatch for " + prefix + names[i]);
    return t;
  };
  if (all.count("ema.decay")) {
    EmaState e;
    e.decay = take("ema.decay").data.at(0);
    for (std::size_t i = 0; i < names.size(); ++i) e.shadow.push_back(like("ema/", i));
    ck.ema = std::move(e);
  }
  if (all.count("adam.step")) {
    AdamState a;
    a.step = static_cast<std::int64_t>(take("adam.step").data.at(0));
    const Tensor& h = take("adam.hyper");
    if (h.numel() != 4) throw FormatError("checkpoint: malformed adam.hyper");
    a.lr = h.data[0];
    a.beta1 = h.data[1];
    a.beta2 = h.data[2];
    a.eps = h.data[3];
    for (std::size_t i = 0; i < names.size(); ++i) a.m.push_back(like("adam.m/", i));
    for (std::size_t i = 0; i < names.size(); ++i) a.v.push_back(like("adam.v/", i));
    ck.adam = std::move(a);
  }
  return ck;
}

}  // namespace wmlab
