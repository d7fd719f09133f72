#include "wmlab/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace wmlab {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

Tensor::Tensor(std::vector<int> shape_, double fill) : shape(std::move(shape_)) {
  data.assign(count(shape), fill);
}

Tensor::Tensor(std::vector<int> shape_, std::vector<double> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
  if (data.size() != count(shape)) throw Error("Tensor: data length does not match shape");
}

std::size_t Tensor::count(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw Error("Tensor: negative dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_string(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor to_tensor(const ImageBuffer& img) {
  return Tensor({1, img.channels(), img.height(), img.width()}, img.data());
}

ImageBuffer to_image(const Tensor& t, int batch_index) {
  if (t.rank() != 4) throw Error("to_image: expected a rank-4 tensor");
  const int c = t.dim(1), h = t.dim(2), w = t.dim(3);
  const std::size_t per = static_cast<std::size_t>(c) * h * w;
  const auto first = t.data.begin() + static_cast<std::ptrdiff_t>(per * batch_index);
  return ImageBuffer(h, w, c, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(per)));
}

Tensor stack_images(const std::vector<ImageBuffer>& imgs) {
  if (imgs.empty()) throw Error("stack_images: empty list");
  const auto& f = imgs.front();
  Tensor t({static_cast<int>(imgs.size()), f.channels(), f.height(), f.width()});
  auto out = t.data.begin();
  for (const auto& img : imgs) {
    require_same_shape(f, img, "stack_images");
    out = std::copy(img.data().begin(), img.data().end(), out);
  }
  return t;
}

// ---------------------------------------------------------------- Tape

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return {nodes_.size() - 1};
}

Var Tape::push(std::vector<Var> inputs, ForwardFn forward, BackwardFn backward) {
  Node n;
  std::vector<const Tensor*> vals;
  for (Var v : inputs) {
    n.inputs.push_back(v.id);
    vals.push_back(&nodes_.at(v.id).value);
    n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
  }
  n.value = forward(vals);
  n.forward = std::move(forward);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {nodes_.size() - 1};
}

Tensor& Tape::leaf_value(Var v) {
  Node& n = nodes_.at(v.id);
  if (n.forward) throw Error("Tape::leaf_value: node is not a leaf");
  return n.value;
}

Tensor& Tape::grad(std::size_t id) {
  Node& n = nodes_.at(id);
  if (n.grad.data.empty()) n.grad = Tensor(n.value.shape);
  return n.grad;
}

void Tape::backward(Var out, const Tensor& seed) {
  if (out.id >= nodes_.size()) throw Error("Tape::backward: unknown node");
  if (!seed.same_shape(nodes_[out.id].value))
    throw Error("Tape::backward: seed shape " + shape_string(seed.shape) + " does not match " +
                shape_string(nodes_[out.id].value.shape));
  Tensor& g = grad(out.id);
  for (std::size_t i = 0; i < g.numel(); ++i) g.data[i] += seed.data[i];
  for (std::size_t i = out.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || n.grad.data.empty()) continue;
    n.backward(*this, i);
  }
}

void Tape::zero_grad() {
  for (auto& n : nodes_) n.grad = Tensor();
}

void Tape::replay() {
  for (auto& n : nodes_) {
    if (!n.forward) continue;
    std::vector<const Tensor*> vals;
    for (auto id : n.inputs) vals.push_back(&nodes_[id].value);
    n.value = n.forward(vals);
  }
}

// ---------------------------------------------------------------- primitives

namespace ops {

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw Error(std::string(op) + ": shape mismatch " + shape_string(a.shape) + " vs " +
                shape_string(b.shape));
}

void require_rank4(const Tensor& a, const char* op) {
  if (a.rank() != 4) throw Error(std::string(op) + ": expected [N, C, H, W] input");
}

}  // namespace

Var add(Tape& tape, Var a, Var b) {
  return tape.push(
      {a, b},
      [](const std::vector<const Tensor*>& in) {
        require_same(*in[0], *in[1], "add");
        Tensor out = *in[0];
        for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += in[1]->data[i];
        return out;
      },
      [](Tape& t, std::size_t node) {
        const Tensor& g = t.grad(node);
        for (auto id : t.inputs(node)) {
          if (!t.requires_grad(id)) continue;
          Tensor& gi = t.grad(id);
          for (std::size_t i = 0; i < g.numel(); ++i) gi.data[i] += g.data[i];
        }
      });
}

Var lincomb(Tape& tape, Var x, double a, Var y, double b) {
  return tape.push(
      {x, y},
      [a, b](const std::vector<const Tensor*>& in) {
        require_same(*in[0], *in[1], "lincomb");
        Tensor out = *in[0];
        for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = a * in[0]->data[i] + b * in[1]->data[i];
        return out;
      },
      [a, b](Tape& t, std::size_t node) {
        const Tensor& g = t.grad(node);
        const auto& ins = t.inputs(node);
        const double coef[2] = {a, b};
        for (int k = 0; k < 2; ++k) {
          if (!t.requires_grad(ins[k])) continue;
          Tensor& gi = t.grad(ins[k]);
          for (std::size_t i = 0; i < g.numel(); ++i) gi.data[i] += coef[k] * g.data[i];
        }
      });
}

Var sub(Tape& tape, Var a, Var b) { return lincomb(tape, a, 1.0, b, -1.0); }

Var mul(Tape& tape, Var a, Var b) {
  return tape.push(
      {a, b},
      [](const std::vector<const Tensor*>& in) {
        require_same(*in[0], *in[1], "mul");
        Tensor out = *in[0];
        for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] *= in[1]->data[i];
        return out;
      },
      [](Tape& t, std::size_t node) {
        const Tensor& g = t.grad(node);
        const auto& ins = t.inputs(node);
        const Tensor& va = t.value(ins[0]);
        const Tensor& vb = t.value(ins[1]);
        if (t.requires_grad(ins[0])) {
          Tensor& ga = t.grad(ins[0]);
          for (std::size_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i] * vb.data[i];
        }
        if (t.requires_grad(ins[1])) {
          Tensor& gb = t.grad(ins[1]);
          for (std::size_t i = 0; i < g.numel(); ++i) gb.data[i] += g.data[i] * va.data[i];
        }
      });
}

Var div(Tape& tape, Var a, Var b) {
  return tape.push(
      {a, b},
      [](const std::vector<const Tensor*>& in) {
        require_same(*in[0], *in[1], "div");
        Tensor out = *in[0];
        for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] /= in[1]->data[i];
        return out;
      },
      [](Tape& t, std::size_t node) {
        const Tensor& g = t.grad(node);
        const auto& ins = t.inputs(node);
        const Tensor& va = t.value(ins[0]);
        const Tensor& vb = t.value(ins[1]);
        if (t.requires_grad(ins[0])) {
          Tensor& ga = t.grad(ins[0]);
          for (std::size_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i] / vb.data[i];
        }
        if (t.requires_grad(ins[1])) {
          Tensor& gb = t.grad(ins[1]);
          for (std::size_t i = 0; i < g.numel(); ++i)
            gb.data[i] -= g.data[i] * va.data[i] / (vb.data[i] * vb.data[i]);
        }
      });
}

Var scale(Tape& tape, Var a, double s) {
  return tape.push(
      {a},
      [s](const std::vector<const Tensor*>& in) {
        Tensor out = *in[0];
        for (double& v : out.data) v *= s;
        return out;
      },
      [s](Tape& t, std::size_t node) {
        const Tensor& g = t.grad(node);
        Tensor& ga = t.grad(t.inputs(node)[0]);
        for (std::size_t i = 0; i < g.numel(); ++i) ga.data[i] += s * g.data[i];
      });
}

Var add_scalar(Tape& tape, Var a, double s) {
  return tape.push(
      {a},
      [s](const std::vector<const Tensor*>& in) {
        Tensor out = *in[0];
        for (double& v : out.data) v += s;
        return out;
      },
      [](Tape& t, std::size_t node) {
        const Tensor& g = t.grad(node);
        Tensor& ga = t.grad(t.inputs(node)[0]);
        for (std::size_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i];
      });
}

Var abs(Tape& tape, Var a) {
  // Subgradient sign(x), zero at the kink.
  return tape.push(
      {a},
      [](const std::vector<const Tensor*>& in) {
        Tensor o = *in[0];
        for (double& v : o.data) v = std::abs(v);
        return o;
      },
      [](Tape& t, std::size_t node) {
        const Tensor& g = t.grad(node);
        const auto id = t.inputs(node)[0];
        const Tensor& x = t.value(id);
        Tensor& ga = t.grad(id);
        for (std::size_t i = 0; i < g.numel(); ++i)
          ga.data[i] += x.data[i] > 0 ? g.data[i] : (x.data[i] < 0 ? -g.data[i] : 0.0);
      });
}

Var square(Tape& tape, Var a) {
  return tape.push(
      {a},
      [](const std::vector<const Tensor*>& in) {
        Tensor o = *in[0];
        for (double& v : o.data) v *= v;
        return o;
      },
      [](Tape& t, std::size_t node) {
        const Tensor& g = t.grad(node);
        const auto id = t.inputs(node)[0];
        const Tensor& x = t.value(id);
        Tensor& ga = t.grad(id);
        for (std::size_t i = 0; i < g.numel(); ++i) ga.data[i] += 2.0 * x.data[i] * g.data[i];
      });
}

Var silu(Tape& tape, Var a) {
  return tape.push(
      {a},
      [](const std::vector<const Tensor*>& in) {
        Tensor o = *in[0];
        for (double& v : o.data) v = v / (1.0 + std::exp(-v));
        return o;
      },
      [](Tape& t, std::size_t node) {
        const Tensor& g = t.grad(node);
        const auto id = t.inputs(node)[0];
        const Tensor& x = t.value(id);
        Tensor& ga = t.grad(id);
        for (std::size_t i = 0; i < g.numel(); ++i) {
          const double s = 1.0 / (1.0 + std::exp(-x.data[i]));
          ga.data[i] += g.data[i] * s * (1.0 + x.data[i] * (1.0 - s));
        }
      });
}

Var mean(Tape& tape, Var a) {
  return tape.push(
      {a},
      [](const std::vector<const Tensor*>& in) {
        const auto& d = in[0]->data;
        if (d.empty()) throw Error("mean: empty tensor");
        return Tensor::scalar(std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size()));
      },
      [](Tape& t, std::size_t node) {
        const double g = t.grad(node).data[0];
        Tensor& ga = t.grad(t.inputs(node)[0]);
        const double s = g / static_cast<double>(ga.numel());
        for (double& v : ga.data) v += s;
      });
}

// ---------------------------------------------------------------- convolution

namespace {

struct ConvGeom {
  int n, ci, h, w, co, k, stride, pad, ho, wo;
  std::size_t rows() const { return static_cast<std::size_t>(ci) * k * k; }
  std::size_t cols() const { return static_cast<std::size_t>(ho) * wo; }
};

ConvGeom conv_geom(const Tensor& x, const Tensor& wt, const Tensor& b, int stride, int pad) {
  require_rank4(x, "conv2d");
  if (wt.rank() != 4 || wt.dim(1) != x.dim(1) || wt.dim(2) != wt.dim(3))
    throw Error("conv2d: weight " + shape_string(wt.shape) + " incompatible with input " +
                shape_string(x.shape));
  if (b.rank() != 1 || b.dim(0) != wt.dim(0)) throw Error("conv2d: bias shape mismatch");
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), wt.dim(0), wt.dim(2), stride, pad, 0, 0};
  g.ho = (g.h + 2 * pad - g.k) / stride + 1;
  g.wo = (g.w + 2 * pad - g.k) / stride + 1;
  if (g.ho <= 0 || g.wo <= 0) throw Error("conv2d: input smaller than kernel");
  return g;
}

void im2col(const double* x, const ConvGeom& g, double* cols) {
  const std::size_t ncols = g.cols();
  for (int c = 0; c < g.ci; ++c)
    for (int ky = 0; ky < g.k; ++ky)
      for (int kx = 0; kx < g.k; ++kx) {
        double* row = cols + ((static_cast<std::size_t>(c) * g.k + ky) * g.k + kx) * ncols;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          double* dst = row + static_cast<std::size_t>(oy) * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = x + (static_cast<std::size_t>(c) * g.h + iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix < 0 || ix >= g.w) ? 0.0 : src[ix];
          }
        }
      }
}

void col2im_add(const double* cols, const ConvGeom& g, double* x) {
  const std::size_t ncols = g.cols();
  for (int c = 0; c < g.ci; ++c)
    for (int ky = 0; ky < g.k; ++ky)
      for (int kx = 0; kx < g.k; ++kx) {
        const double* row = cols + ((static_cast<std::size_t>(c) * g.k + ky) * g.k + kx) * ncols;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          const double* src = row + static_cast<std::size_t>(oy) * g.wo;
          double* dst = x + (static_cast<std::size_t>(c) * g.h + iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
}

}  // namespace

Var conv2d(Tape& tape, Var x, Var weight, Var bias, int stride, int pad) {
  if (stride < 1 || pad < 0) throw Error("conv2d: invalid stride or padding");
  return tape.push(
      {x, weight, bias},
      [stride, pad](const std::vector<const Tensor*>& in) {
        const Tensor& xv = *in[0];
        const Tensor& wv = *in[1];
        const Tensor& bv = *in[2];
        const ConvGeom g = conv_geom(xv, wv, bv, stride, pad);
        Tensor out({g.n, g.co, g.ho, g.wo});
        std::vector<double> cols(g.rows() * g.cols());
        ConstMapMat W(wv.data.data(), g.co, static_cast<Eigen::Index>(g.rows()));
        ConstMapMat C(cols.data(), static_cast<Eigen::Index>(g.rows()), static_cast<Eigen::Index>(g.cols()));
        Eigen::Map<const Eigen::VectorXd> B(bv.data.data(), g.co);
        const std::size_t in_per = static_cast<std::size_t>(g.ci) * g.h * g.w;
        const std::size_t out_per = static_cast<std::size_t>(g.co) * g.cols();
        for (int n = 0; n < g.n; ++n) {
          im2col(xv.data.data() + n * in_per, g, cols.data());
          MapMat O(out.data.data() + n * out_per, g.co, static_cast<Eigen::Index>(g.cols()));
          O.noalias() = W * C;
          O.colwise() += B;
        }
        return out;
      },
      [stride, pad](Tape& t, std::size_t node) {
        const auto ins = t.inputs(node);
        const Tensor& xv = t.value(ins[0]);
        const Tensor& wv = t.value(ins[1]);
        const Tensor& bv = t.value(ins[2]);
        const Tensor& gout = t.grad(node);
        const ConvGeom g = conv_geom(xv, wv, bv, stride, pad);
        const bool need_x = t.requires_grad(ins[0]);
        const bool need_w = t.requires_grad(ins[1]);
        const bool need_b = t.requires_grad(ins[2]);
        std::vector<double> cols(g.rows() * g.cols());
        std::vector<double> dcols(need_x ? g.rows() * g.cols() : 0);
        ConstMapMat W(wv.data.data(), g.co, static_cast<Eigen::Index>(g.rows()));
        const std::size_t in_per = static_cast<std::size_t>(g.ci) * g.h * g.w;
        const std::size_t out_per = static_cast<std::size_t>(g.co) * g.cols();
        for (int n = 0; n < g.n; ++n) {
          ConstMapMat G(gout.data.data() + n * out_per, g.co, static_cast<Eigen::Index>(g.cols()));
          if (need_w) {
            im2col(xv.data.data() + n * in_per, g, cols.data());
            ConstMapMat C(cols.data(), static_cast<Eigen::Index>(g.rows()), static_cast<Eigen::Index>(g.cols()));
            MapMat dW(t.grad(ins[1]).data.data(), g.co, static_cast<Eigen::Index>(g.rows()));
            dW.noalias() += G * C.transpose();
          }
          if (need_b) {
            Eigen::Map<Eigen::VectorXd> dB(t.grad(ins[2]).data.data(), g.co);
            dB += G.rowwise().sum();
          }
          if (need_x) {
            MapMat DC(dcols.data(), static_cast<Eigen::Index>(g.rows()), static_cast<Eigen::Index>(g.cols()));
            DC.noalias() = W.transpose() * G;
            col2im_add(dcols.data(), g, t.grad(ins[0]).data.data() + n * in_per);
          }
        }
      });
}

Var group_norm(Tape& tape, Var x, Var gamma, Var beta, int groups, double eps) {
  auto stats = [groups, eps](const Tensor& xv, int n, int grp, double& mu, double& inv) {
    const int c = xv.dim(1);
    const std::size_t hw = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
    const int cpg = c / groups;
    const double* p = xv.data.data() + (static_cast<std::size_t>(n) * c + grp * cpg) * hw;
    const std::size_t cnt = cpg * hw;
    double s = 0.0;
    for (std::size_t i = 0; i < cnt; ++i) s += p[i];
    mu = s / static_cast<double>(cnt);
    double v = 0.0;
    for (std::size_t i = 0; i < cnt; ++i) v += (p[i] - mu) * (p[i] - mu);
    inv = 1.0 / std::sqrt(v / static_cast<double>(cnt) + eps);
  };
  auto check = [groups](const Tensor& xv, const Tensor& gv, const Tensor& bv) {
    require_rank4(xv, "group_norm");
    if (groups < 1 || xv.dim(1) % groups != 0)
      throw Error("group_norm: channel count " + std::to_string(xv.dim(1)) +
                  " not divisible by groups");
    if (gv.numel() != static_cast<std::size_t>(xv.dim(1)) || bv.numel() != gv.numel())
      throw Error("group_norm: affine parameter shape mismatch");
  };
  return tape.push(
      {x, gamma, beta},
      [stats, check, groups](const std::vector<const Tensor*>& in) {
        const Tensor& xv = *in[0];
        check(xv, *in[1], *in[2]);
        Tensor out(xv.shape);
        const int N = xv.dim(0), C = xv.dim(1);
        const std::size_t hw = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
        const int cpg = C / groups;
        for (int n = 0; n < N; ++n)
          for (int grp = 0; grp < groups; ++grp) {
            double mu, inv;
            stats(xv, n, grp, mu, inv);
            for (int c = grp * cpg; c < (grp + 1) * cpg; ++c) {
              const std::size_t off = (static_cast<std::size_t>(n) * C + c) * hw;
              const double ga = in[1]->data[c], be = in[2]->data[c];
              for (std::size_t i = 0; i < hw; ++i)
                out.data[off + i] = (xv.data[off + i] - mu) * inv * ga + be;
            }
          }
        return out;
      },
      [stats, groups](Tape& t, std::size_t node) {
        const auto ins = t.inputs(node);
        const Tensor& xv = t.value(ins[0]);
        const Tensor& gv = t.value(ins[1]);
        const Tensor& g = t.grad(node);
        const int N = xv.dim(0), C = xv.dim(1);
        const std::size_t hw = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
        const int cpg = C / groups;
        const double cnt = static_cast<double>(cpg * hw);
        const bool need_x = t.requires_grad(ins[0]);
        const bool need_g = t.requires_grad(ins[1]);
        const bool need_b = t.requires_grad(ins[2]);
        for (int n = 0; n < N; ++n)
          for (int grp = 0; grp < groups; ++grp) {
            double mu, inv;
            stats(xv, n, grp, mu, inv);
            double sum_d = 0.0, sum_dx = 0.0;
            for (int c = grp * cpg; c < (grp + 1) * cpg; ++c) {
              const std::size_t off = (static_cast<std::size_t>(n) * C + c) * hw;
              double sg = 0.0, sgx = 0.0;
              for (std::size_t i = 0; i < hw; ++i) {
                const double xh = (xv.data[off + i] - mu) * inv;
                sg += g.data[off + i];
                sgx += g.data[off + i] * xh;
              }
              if (need_g) t.grad(ins[1]).data[c] += sgx;
              if (need_b) t.grad(ins[2]).data[c] += sg;
              sum_d += sg * gv.data[c];
              sum_dx += sgx * gv.data[c];
            }
            if (!need_x) continue;
            Tensor& gx = t.grad(ins[0]);
            const double md = sum_d / cnt, mdx = sum_dx / cnt;
            for (int c = grp * cpg; c < (grp + 1) * cpg; ++c) {
              const std::size_t off = (static_cast<std::size_t>(n) * C + c) * hw;
              for (std::size_t i = 0; i < hw; ++i) {
                const double xh = (xv.data[off + i] - mu) * inv;
                const double d = g.data[off + i] * gv.data[c];
                gx.data[off + i] += inv * (d - md - xh * mdx);
              }
            }
          }
      });
}

Var add_channel_bias(Tape& tape, Var x, Var v) {
  return tape.push(
      {x, v},
      [](const std::vector<const Tensor*>& in) {
        const Tensor& xv = *in[0];
        require_rank4(xv, "add_channel_bias");
        const Tensor& vv = *in[1];
        if (vv.rank() != 2 || vv.dim(0) != xv.dim(0) || vv.dim(1) != xv.dim(1))
          throw Error("add_channel_bias: bias must be [N, C]");
        Tensor out = xv;
        const std::size_t hw = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
        for (std::size_t nc = 0; nc < vv.numel(); ++nc)
          for (std::size_t i = 0; i < hw; ++i) out.data[nc * hw + i] += vv.data[nc];
        return out;
      },
      [](Tape& t, std::size_t node) {
        const auto ins = t.inputs(node);
        const Tensor& g = t.grad(node);
        const std::size_t hw = static_cast<std::size_t>(g.dim(2)) * g.dim(3);
        if (t.requires_grad(ins[0])) {
          Tensor& gx = t.grad(ins[0]);
          for (std::size_t i = 0; i < g.numel(); ++i) gx.data[i] += g.data[i];
        }
        if (t.requires_grad(ins[1])) {
          Tensor& gv = t.grad(ins[1]);
          for (std::size_t nc = 0; nc < gv.numel(); ++nc) {
            double s = 0.0;
            for (std::size_t i = 0; i < hw; ++i) s += g.data[nc * hw + i];
            gv.data[nc] += s;
          }
        }
      });
}

Var linear(Tape& tape, Var x, Var weight, Var bias) {
  return tape.push(
      {x, weight, bias},
      [](const std::vector<const Tensor*>& in) {
        const Tensor& xv = *in[0];
        const Tensor& wv = *in[1];
        const Tensor& bv = *in[2];
        if (xv.rank() != 2 || wv.rank() != 2 || wv.dim(1) != xv.dim(1) || bv.numel() != static_cast<std::size_t>(wv.dim(0)))
          throw Error("linear: shape mismatch");
        Tensor out({xv.dim(0), wv.dim(0)});
        ConstMapMat X(xv.data.data(), xv.dim(0), xv.dim(1));
        ConstMapMat W(wv.data.data(), wv.dim(0), wv.dim(1));
        MapMat O(out.data.data(), xv.dim(0), wv.dim(0));
        O.noalias() = X * W.transpose();
        O.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bv.data.data(), wv.dim(0));
        return out;
      },
      [](Tape& t, std::size_t node) {
        const auto ins = t.inputs(node);
        const Tensor& xv = t.value(ins[0]);
        const Tensor& wv = t.value(ins[1]);
        const Tensor& g = t.grad(node);
        ConstMapMat G(g.data.data(), g.dim(0), g.dim(1));
        if (t.requires_grad(ins[0])) {
          MapMat dX(t.grad(ins[0]).data.data(), xv.dim(0), xv.dim(1));
          dX.noalias() += G * ConstMapMat(wv.data.data(), wv.dim(0), wv.dim(1));
        }
        if (t.requires_grad(ins[1])) {
          MapMat dW(t.grad(ins[1]).data.data(), wv.dim(0), wv.dim(1));
          dW.noalias() += G.transpose() * ConstMapMat(xv.data.data(), xv.dim(0), xv.dim(1));
        }
        if (t.requires_grad(ins[2])) {
          Eigen::Map<Eigen::RowVectorXd> dB(t.grad(ins[2]).data.data(), wv.dim(0));
          dB += G.colwise().sum();
        }
      });
}

Var concat_channels(Tape& tape, Var a, Var b) {
  return tape.push(
      {a, b},
      [](const std::vector<const Tensor*>& in) {
        const Tensor& av = *in[0];
        const Tensor& bv = *in[1];
        require_rank4(av, "concat_channels");
        require_rank4(bv, "concat_channels");
        if (av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2) || av.dim(3) != bv.dim(3))
          throw Error("concat_channels: batch/spatial shape mismatch");
        const int N = av.dim(0), ca = av.dim(1), cb = bv.dim(1);
        const std::size_t hw = static_cast<std::size_t>(av.dim(2)) * av.dim(3);
        Tensor out({N, ca + cb, av.dim(2), av.dim(3)});
        auto o = out.data.begin();
        for (int n = 0; n < N; ++n) {
          auto pa = av.data.begin() + static_cast<std::ptrdiff_t>(n * ca * hw);
          o = std::copy(pa, pa + static_cast<std::ptrdiff_t>(ca * hw), o);
          auto pb = bv.data.begin() + static_cast<std::ptrdiff_t>(n * cb * hw);
          o = std::copy(pb, pb + static_cast<std::ptrdiff_t>(cb * hw), o);
        }
        return out;
      },
      [](Tape& t, std::size_t node) {
        const auto ins = t.inputs(node);
        const Tensor& g = t.grad(node);
        const int N = g.dim(0);
        const int ca = t.value(ins[0]).dim(1), cb = t.value(ins[1]).dim(1);
        const std::size_t hw = static_cast<std::size_t>(g.dim(2)) * g.dim(3);
        for (int n = 0; n < N; ++n) {
          const double* src = g.data.data() + n * (ca + cb) * hw;
          if (t.requires_grad(ins[0])) {
            double* d = t.grad(ins[0]).data.data() + n * ca * hw;
            for (std::size_t i = 0; i < ca * hw; ++i) d[i] += src[i];
          }
          if (t.requires_grad(ins[1])) {
            double* d = t.grad(ins[1]).data.data() + n * cb * hw;
            for (std::size_t i = 0; i < cb * hw; ++i) d[i] += src[ca * hw + i];
          }
        }
      });
}

Var upsample_nearest2(Tape& tape, Var x) {
  return tape.push(
      {x},
      [](const std::vector<const Tensor*>& in) {
        const Tensor& xv = *in[0];
        require_rank4(xv, "upsample_nearest2");
        const int NC = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
        Tensor out({xv.dim(0), xv.dim(1), 2 * h, 2 * w});
        for (int p = 0; p < NC; ++p)
          for (int y = 0; y < 2 * h; ++y)
            for (int xx = 0; xx < 2 * w; ++xx)
              out.data[(static_cast<std::size_t>(p) * 2 * h + y) * 2 * w + xx] =
                  xv.data[(static_cast<std::size_t>(p) * h + y / 2) * w + xx / 2];
        return out;
      },
      [](Tape& t, std::size_t node) {
        const auto id = t.inputs(node)[0];
        const Tensor& xv = t.value(id);
        const Tensor& g = t.grad(node);
        Tensor& gx = t.grad(id);
        const int NC = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
        for (int p = 0; p < NC; ++p)
          for (int y = 0; y < 2 * h; ++y)
            for (int xx = 0; xx < 2 * w; ++xx)
              gx.data[(static_cast<std::size_t>(p) * h + y / 2) * w + xx / 2] +=
                  g.data[(static_cast<std::size_t>(p) * 2 * h + y) * 2 * w + xx];
      });
}

Var avg_pool2(Tape& tape, Var x) {
  return tape.push(
      {x},
      [](const std::vector<const Tensor*>& in) {
        const Tensor& xv = *in[0];
        require_rank4(xv, "avg_pool2");
        const int NC = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
        const int ho = h / 2, wo = w / 2;
        if (ho == 0 || wo == 0) throw Error("avg_pool2: input too small");
        Tensor out({xv.dim(0), xv.dim(1), ho, wo});
        for (int p = 0; p < NC; ++p)
          for (int y = 0; y < ho; ++y)
            for (int xx = 0; xx < wo; ++xx) {
              const double* r0 = xv.data.data() + (static_cast<std::size_t>(p) * h + 2 * y) * w + 2 * xx;
              const double* r1 = r0 + w;
              out.data[(static_cast<std::size_t>(p) * ho + y) * wo + xx] =
                  0.25 * (r0[0] + r0[1] + r1[0] + r1[1]);
            }
        return out;
      },
      [](Tape& t, std::size_t node) {
        const auto id = t.inputs(node)[0];
        const Tensor& xv = t.value(id);
        const Tensor& g = t.grad(node);
        Tensor& gx = t.grad(id);
        const int NC = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
        const int ho = h / 2, wo = w / 2;
        for (int p = 0; p < NC; ++p)
          for (int y = 0; y < ho; ++y)
            for (int xx = 0; xx < wo; ++xx) {
              const double v = 0.25 * g.data[(static_cast<std::size_t>(p) * ho + y) * wo + xx];
              double* r0 = gx.data.data() + (static_cast<std::size_t>(p) * h + 2 * y) * w + 2 * xx;
              r0[0] += v;
              r0[1] += v;
              r0[w] += v;
              r0[w + 1] += v;
            }
      });
}

Var separable_filter_valid(Tape& tape, Var x, const std::vector<double>& taps) {
  const int k = static_cast<int>(taps.size());
  if (k < 1) throw Error("separable_filter_valid: empty kernel");
  return tape.push(
      {x},
      [taps, k](const std::vector<const Tensor*>& in) {
        const Tensor& xv = *in[0];
        require_rank4(xv, "separable_filter_valid");
        const int NC = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
        const int ho = h - k + 1, wo = w - k + 1;
        if (ho <= 0 || wo <= 0) throw Error("separable_filter_valid: image smaller than window");
        Tensor out({xv.dim(0), xv.dim(1), ho, wo});
        std::vector<double> tmp(static_cast<std::size_t>(h) * wo);
        for (int p = 0; p < NC; ++p) {
          const double* src = xv.data.data() + static_cast<std::size_t>(p) * h * w;
          for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < wo; ++xx) {
              double s = 0.0;
              for (int a = 0; a < k; ++a) s += taps[a] * src[y * w + xx + a];
              tmp[static_cast<std::size_t>(y) * wo + xx] = s;
            }
          double* dst = out.data.data() + static_cast<std::size_t>(p) * ho * wo;
          for (int y = 0; y < ho; ++y)
            for (int xx = 0; xx < wo; ++xx) {
              double s = 0.0;
              for (int a = 0; a < k; ++a) s += taps[a] * tmp[static_cast<std::size_t>(y + a) * wo + xx];
              dst[y * wo + xx] = s;
            }
        }
        return out;
      },
      [taps, k](Tape& t, std::size_t node) {
        const auto id = t.inputs(node)[0];
        const Tensor& xv = t.value(id);
        const Tensor& g = t.grad(node);
        Tensor& gx = t.grad(id);
        const int NC = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
        const int ho = h - k + 1, wo = w - k + 1;
        std::vector<double> tmp(static_cast<std::size_t>(h) * wo);
        for (int p = 0; p < NC; ++p) {
          std::fill(tmp.begin(), tmp.end(), 0.0);
          const double* gp = g.data.data() + static_cast<std::size_t>(p) * ho * wo;
          for (int y = 0; y < ho; ++y)
            for (int xx = 0; xx < wo; ++xx)
              for (int a = 0; a < k; ++a) tmp[static_cast<std::size_t>(y + a) * wo + xx] += taps[a] * gp[y * wo + xx];
          double* dst = gx.data.data() + static_cast<std::size_t>(p) * h * w;
          for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < wo; ++xx)
              for (int a = 0; a < k; ++a) dst[y * w + xx + a] += taps[a] * tmp[static_cast<std::size_t>(y) * wo + xx];
        }
      });
}

}  // namespace ops

std::vector<double> gaussian_taps(int size, double sigma) {
  if (size < 1 || sigma <= 0.0) throw Error("gaussian_taps: invalid size or sigma");
  std::vector<double> taps(size);
  const double c = (size - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    taps[i] = std::exp(-((i - c) * (i - c)) / (2.0 * sigma * sigma));
    sum += taps[i];
  }
  for (double& v : taps) v /= sum;
  return taps;
}

}  // namespace wmlab
